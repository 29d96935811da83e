from ringformer.adversarial import (DiscriminatorFamily, DiscriminatorOutput, FamilyScores, LossReport, LossWeights,
                                    MPDConfig, MultiPeriodDiscriminator, adversarial_losses, feature_matching_loss,
                                    evaluate_losses, magnitude_loss, phase_loss, spectral_decomposition_loss, total_loss)
from ringformer.attention import AttentionConfig, ScoreBufferTracker, ring_attention, vanilla_attention
from ringformer.conformer import ConformerConfig, ConformerWeights
from ringformer.dsp import ComplexSpectrogram, MelConfig, MelSpectrogram, Waveform, istft, mel_spectrogram, stft
from ringformer.errors import (ArgumentError, ConfigError, DegenerateInputError, DeviceError, DimensionError,
                               FormatError, NumericError, ProtocolError, RingFormerError)
from ringformer.generator import GeneratorConfig, GeneratorWeights, Vocoder, build_generator, param_count, synthesize
from ringformer.formats import read_mel, read_wav, read_weights, write_mel, write_wav, write_weights
from ringformer.metrics import F0Config, F0Contour, MetricReport, evaluate_metrics, f0_contour, mcd, pearson
from ringformer.verbosity import VerbosityLevel
