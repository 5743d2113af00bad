"""Power transfer through the inter-layer diffraction for the default SIM.

Prints the singular values of a single gap and of the all-zero-phase cascade
for L = 2..5, and how the median CRB floor compares with a single layer. A
single layer is a unitary diagonal, so every extra gap can only attenuate or
mix; this is the quantity that decides the layer-count trend.
"""
import numpy as np

from simisac.channels import Scenario, build_channels
from simisac.mao import MaoParams, mao_optimize
from simisac.propagation import PhaseStack, SimGeometry, diffraction_set, end_to_end_matrix


def main(seeds=5):
    for layers in range(2, 6):
        geom = SimGeometry.default(layers)
        om = diffraction_set(geom)
        cascade = end_to_end_matrix(PhaseStack.zeros(layers, geom.atoms_per_layer), om)
        print(f"L={layers} spacing={geom.layer_spacing / geom.wavelength:.2f} lambda  "
              f"gap sv={np.round(np.linalg.svd(om[0], compute_uv=False), 4)}  "
              f"cascade sv={np.linalg.svd(cascade, compute_uv=False)}")
    scenario = Scenario()
    for layers in (1, 2, 3):
        geom = SimGeometry.default(layers)
        crbs = [mao_optimize(scenario, geom, build_channels(scenario, geom, s), MaoParams(seed=s)).crb
                for s in range(seeds)]
        print(f"L={layers}: median CRB {10 * np.log10(np.median(crbs)):.2f} dB over {seeds} seeds")


if __name__ == "__main__":
    main()
