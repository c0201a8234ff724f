"""
Desk-scale acceptance presets and the thresholds each finished run must meet.
"""

ACCEPTANCE_RUNS = {
    # ── MNIST, 16X, 25 dB, Bernoulli, 100 epochs ──
    "mnist_desk_16x": {
        "config": "configs/mnist_desk_16x.json",
        "needs": "SPI_MNIST_DIR",
        "mae_reduction": 0.30,          # MAE of μ̂ at least 30% below the LSQR input
        "ssim_gain": 0.10,              # SSIM at least 0.10 above the LSQR input
        "r2_min": 0.3,
    },

    # ── MNIST compression sweep 8/16/32/64X ──
    "mnist_compression": {
        "config": "configs/mnist_compression.json",
        "needs": "SPI_MNIST_DIR",
        "epochs": 100,
        "likelihoods": ["bernoulli"],
        "trend_tolerance": 0.05,        # one adjacent-pair violation within 5% relative
        "trend_violations": 1,
    },

    # ── MNIST noise sweep at 16X ──
    "mnist_noise": {
        "config": "configs/mnist_noise.json",
        "needs": "SPI_MNIST_DIR",
        "epochs": 100,
        "snr_db": [0, 25],
        "mae_max_0db": 0.12,            # full scale: 0.08
        "ssim_min_0db": 0.6,            # full scale: 0.7 (R² 0.75)
    },

    # ── STL-10 reduced, 4X, three likelihoods ──
    "stl10_reduced_4x": {
        "config": "configs/stl10_reduced_4x.json",
        "needs": "SPI_STL10_DIR",
        "r2_above_bernoulli": ["laplacian", "gaussian"],
    },
}
