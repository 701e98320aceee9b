"""Price the analytic benchmark and compare every surface to its closed
form.

One log-utility agent, Brownian state, unit notional payoff, zero
rates, terminal endowment e^x, one stock paying the terminal state.
Then the pricing surfaces are elementary:

    density (measure change)   e^{-x + (1 - t)/2}
    numeraire state factor     e^{-x + (1 - t)/2}
    deflated stock price       x - (1 - t)

so the whole backward-PDE pipeline can be checked to a tolerance.
"""

import numpy as np

from radnerlab import (build_solution, evaluate_primitives, load_scenario,
                       simulate_paths, solve_weights)


def main():
    sc = load_scenario("scenarios/benchmark.toml")
    bundle = simulate_paths(sc.econ.diffusion, sc.tgrid, 5_000, sc.seed)
    prims = evaluate_primitives(sc.econ, bundle)
    result = solve_weights(prims, sc.econ.utilities(),
                           sc.econ.terminal_utilities(), sc.solver)
    sol = build_solution(sc.econ, sc.tgrid.times, sc.sgrid, result)

    mask = sc.sgrid.interior_mask(0.5).ravel()
    nodes = sc.sgrid.flat_states()[mask]
    x = nodes[:, 0]

    def report(name, surface, closed_form, skip_last=False, floor=0.0):
        worst = 0.0
        n_levels = surface.times.size - (1 if skip_last else 0)
        for k in range(n_levels):
            t = float(surface.times[k])
            got = surface.values[k].ravel()[mask]
            want = closed_form(t, x)
            denom = np.maximum(np.abs(want), max(floor, 1e-300))
            worst = max(worst, float(np.max(np.abs(got - want) / denom)))
        print("%-24s max relative error %.3e" % (name, worst))
        return worst

    report("density surface", sol.density_surface,
           lambda t, x: np.exp(-x + 0.5 * (1.0 - t)))
    report("numeraire state factor", sol.numeraire_state_surface,
           lambda t, x: np.exp(-x + 0.5 * (1.0 - t)), skip_last=True)
    report("deflated stock price", sol.stock_surfaces[0],
           lambda t, x: x - (1.0 - t), floor=1.0)

    # The same objects along simulated paths: the state-price deflator
    # times the numeraire reproduces the measure-change martingale.
    work_p = prims.discount * sol.marginal_paths(prims)
    y = sol.density_paths(prims)
    b = sol.numeraire_paths(prims)
    gap = np.max(np.abs(work_p[:, :-1] * b[:, :-1] - y[:, :-1])
                 / np.abs(y[:, :-1]))
    print("pathwise deflator x numeraire vs martingale: %.3e" % gap)

    v0 = float(sol.density_surface.interpolate(0.0, sc.econ.diffusion.x0[None, :])[0])
    print("origin value %.6f vs e^{1/2} = %.6f" % (v0, np.exp(0.5)))


if __name__ == "__main__":
    main()
