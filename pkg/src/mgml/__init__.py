"""mgml: multi-granularity motion-language modeling at desk scale.

Motion tokenization through a VQ-VAE, a unified text/motion vocabulary, the
snippet-grid motion-script format, a 28-task prompt compiler with two-stage
training, a small encoder-decoder language model, and the matching evaluation
metrics.
"""

from .motion import (
    DEFAULT_FPS, DEFAULT_MAX_FRAMES, DEFAULT_SNIPPET_SECONDS,
    MotionSequence, SnippetGrid, make_snippet_grid, read_motion, slice_motion,
    write_motion,
)
from .script import (
    MOTIONLESS, SEP, MotionScript, TimeSpan, format_time_span, parse_script,
    parse_time_span, script_window, serialize_script,
)
from .synth import (
    DEFAULT_CHANNELS, MotionEvent, SyntheticSpec, caption_for, captions_for,
    random_spec, script_for, synth_motion,
)
from .quantizer import (
    MotionQuantizer, QuantizerConfig, TrainSchedule, encode_motion,
    load_quantizer, quantize, reconstruct, save_quantizer, train_vqvae,
    vqvae_loss,
)
from .vocab import UnifiedVocabulary, build_vocab
from .tasks import (
    PromptPair, TaskSpec, all_tasks, derive_aux, finetune_set, get_task,
    instantiate, pretrain_stream,
)
from .seq2seq import (
    GenerationResult, Seq2SeqConfig, Seq2SeqModel, eval_loss, generate,
    load_lm, save_lm, train_step,
)
from .dataset import (
    MotionRecord, Sample, build_sample, build_synth_corpus, load_samples,
    read_manifest, write_manifest,
)
from .embedding import (
    ContrastiveEmbedder, EventSequenceEmbedder, StatsHashEmbedder,
    train_contrastive,
)
from .metrics import (
    diversity, fid, interval_iou, localization_score, mmodality,
    retrieval_metrics, snippet_level_eval, text_metrics,
)

__version__ = "0.1.0"
