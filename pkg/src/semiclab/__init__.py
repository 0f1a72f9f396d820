"""semiclab: a numerical laboratory for semiclassical mechanics at finite truncation.

Subpackages:

- ``fock``        truncated bosonic Fock spaces, ladder/quadratic operators,
                  displacements, Gaussian states, weighted norms
- ``bogoliubov``  quadratic-Hamiltonian evolution: (F, G) linear flows, the
                  Riccati equation, Gaussian-ansatz and direct propagators
- ``packets``     complex-WKB wave packets on spatial grids, composed states
                  over isotropic manifolds, split-step evolution
- ``symmetry``    Lie-algebra consistency checks, one-parameter evolutions,
                  group words, canonical coordinates, anomaly detection
- ``constrained`` constrained Fock spaces over isotropic planes
- ``scenarios``   prebuilt verification scenarios
- ``cli``         scenario runner and report emitter
"""

__version__ = "0.1.0"
