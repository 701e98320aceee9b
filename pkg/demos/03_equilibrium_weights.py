"""Find the planner weights that clear the market.

Each weight vector w induces the planner allocation of the aggregate
income stream; agent m's "excess expenditure" is the state-price value
of what the allocation hands them beyond their endowed income share.
The equilibrium weights zero all excesses simultaneously.  The excesses
sum to zero path by path (the allocation exhausts income exactly), so
the solver works on the simplex with common random numbers: the same
frozen path bundle is used at every iterate.
"""

import numpy as np

from radnerlab import (evaluate_primitives, excess_map, load_scenario,
                       simulate_paths, solve_weights)


def main():
    sc = load_scenario("scenarios/symmetric-pair.toml")
    bundle = simulate_paths(sc.econ.diffusion, sc.tgrid, 20_000, sc.seed)
    prims = evaluate_primitives(sc.econ, bundle)
    utilities = sc.econ.utilities()
    terminal = sc.econ.terminal_utilities()

    # The excess map at a few weight vectors: positive first component
    # means agent 1 is allocated more than their income finances.
    for w in ([0.30, 0.70], [0.50, 0.50], [0.65, 0.35]):
        rep = excess_map(np.array(w), prims, utilities, terminal)
        print("w = %s  excess = [%+.5f %+.5f]  pathwise sum max %.1e"
              % (w, rep.phi[0], rep.phi[1], rep.pathwise_sum_max))

    # Damped Newton from a deliberately skewed start.
    result = solve_weights(prims, utilities, terminal, sc.solver)
    print("converged:", result.converged, " iterations:", result.n_iter)
    print("weights:", result.weights, " residual %.2e" % result.residual)
    for row in result.trace:
        print("  iter %d  residual %.3e  step %.3f  weights %s"
              % (row["iter"], row["residual"], row["step"],
                 np.round(row["weights"], 8)))


if __name__ == "__main__":
    main()
