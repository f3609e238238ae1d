"""Filter-bank deep network pipeline for SSVEP speller target identification."""

from .dataset import (ArchiveCorruptionError, ArchiveDataError, ArchiveError,
                      ArchiveFormatError, Fold, FoldPlan, RecordingMeta,
                      SsvepArchive, TrialSet, extract_epochs, filter_blocks,
                      merge_trialsets, plan_leave_one_block_out, read_archive,
                      select_channels, write_archive)
from .filterbank import (BandpassSpec, FilterBankSpec, FilterCoefficients,
                         SubbandStack, design_cheby1_bandpass, filtfilt,
                         make_subbands, subband_stacks)
from .network import (DropoutSpec, ForwardCache, NetworkConfig, Parameters,
                      backward, forward, init_params, loss, predict)
from .training import (AdamState, Checkpoint, CheckpointFormatError, Provenance,
                       StageConfig, adam_step, derive_seed, load_checkpoint,
                       save_checkpoint, train_stage, two_stage_train)
from .evaluation import (ConfusionMatrix, DurationResult, EvalReport,
                         SubjectResult, accuracy, confusion, confusion_to_csv,
                         format_mean_se_table, itr_bits_per_min, report_to_csv,
                         report_to_json, run_protocol)
from .analysis import (ChannelImportance, StimulusLayout, SynthSpec,
                       channel_importance, distance_gap_means,
                       generate_synthetic, sinusoid_distance_matrix,
                       stepped_phase_layout)

__version__ = "0.1.0"
