"""
Generator and discriminator parameter presets.

Edit this file to add presets. Each generator preset lists overrides of
GeneratorConfig fields; keys that are left out keep the dataclass default.
"""

DEFAULT_PARAMS = {
    # Published hyperparameter table
    "base": {
        "n_mels": 80,
        "input_channels": 512,
        "upsample_rates": [4, 4],
        "upsample_kernels": [8, 8],
        "output_channels": 66,
        "istft_n_fft": 64,
        "istft_hop": 16,
        "resblock_kernel_sizes": [3, 7, 11],
        "resblock_dilations": [[1, 3, 5], [1, 3, 5], [1, 3, 5]],
        "conformer_blocks": 2,
        "conformer_layers": 2,
        "num_heads": 8,
        "head_dim": 64,
        "depthwise_kernel": 31,
        "dropout": 0.1,
        "block_len": 512,
    },
    # Same topology at reduced width, for quick checks
    "desk": {
        "input_channels": 64,
        "resblock_kernel_sizes": [3, 5],
        "resblock_dilations": [[1, 3], [1, 3]],
        "conformer_blocks": 1,
        "conformer_layers": 2,
        "num_heads": 2,
        "head_dim": 16,
        "depthwise_kernel": 7,
        "block_len": 32,
    },
    # Convolutions only: no MRF, no Conformer layers
    "debug": {
        "input_channels": 32,
        "resblock_kernel_sizes": [],
        "resblock_dilations": [],
        "conformer_blocks": 0,
    },
}

DISCRIMINATOR_PARAMS = {
    "mpd": {
        "periods": [2, 3, 5, 7, 9],
        "kernel_size": 5,
        "stride": 3,
        "channels": [32, 128, 512, 1024, 1024],
        "leaky_slope": 0.1,
    },
    "mpd_desk": {
        "periods": [2, 3, 5, 7, 9],
        "kernel_size": 5,
        "stride": 3,
        "channels": [4, 8, 16, 32, 32],
        "leaky_slope": 0.1,
    },
    # Retained as constants only; the CQT discriminator itself is not computed here.
    "ms_sb_cqt": {
        "hop_lengths": [512, 256, 256],
        "n_octaves": [9, 9, 9],
        "bins_per_octave": [24, 36, 48],
    },
}
