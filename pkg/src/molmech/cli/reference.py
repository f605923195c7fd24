"""Published full-scale numbers carried into reports as annotations.

These come from a 6-layer model trained on a large real-molecule corpus.  A
desk-scale run is not expected to reproduce them, and no test uses them as a
target.
"""

from __future__ import annotations

FULL_SCALE_REFERENCE = {
    "heads": {
        "L2H7": {"pointer_mass": 0.307, "delta_margin": 0.51, "ablation_validity": 0.796},
        "L1H2": {"pointer_mass": 0.033, "delta_margin": 4.98, "ablation_validity": 0.254},
        "L2H3": {"pointer_mass": 0.490, "delta_margin": 0.58, "ablation_validity": 0.637},
        "control_validity": 0.903,
    },
    "valence": {
        "probe_layer": 3, "probe_accuracy": 0.9908, "probe_ci": [0.9903, 0.9914],
        "steering_alpha": 2.0, "delta_logit": {"-": -0.007, "=": 0.017, "#": 0.047},
    },
    "specificity": {"nitrile": {"sae": 0.44, "dense": 0.00}},
    "universality": {"random_baseline_range": [0.151, 0.166]},
    "reconstruction": {"layer1_x16_delta_ce": 0.016, "layer5_validity": 1.0},
}
