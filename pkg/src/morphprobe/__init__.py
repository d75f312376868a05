"""Subword tokenization analysis and layerwise probing over frozen
contextual embeddings."""

__version__ = "0.1.0"

from morphprobe.tokenizer import (
    Segmentation,
    Vocabulary,
    load_vocabulary,
    tokenize_sentence,
    tokenize_word,
    train_vocabulary,
)
from morphprobe.tokstats import (
    SegmentedCorpus,
    SegmentedItem,
    compute_report,
    length_stats,
    morph_agreement,
    piece_entropy,
    rank_length_profile,
)
from morphprobe.store import (
    EmbeddingRecord,
    Store,
    StoreHeader,
    layer_index_for,
    load_store,
    pool_subwords,
    read_store,
    save_store,
    write_store,
)
from morphprobe.probe import (
    ProbeModel,
    TrainerConfig,
    adam_step,
    forward,
    loss_and_grads,
    scalar_mix,
    train_probe,
)
from morphprobe.sequence_eval import (
    SpanF1Report,
    TagSequence,
    layer_sweep,
    ner_span_f1,
    pos_accuracy,
    train_tagger,
)
from morphprobe.probe_dataset import (
    MorphTask,
    ProbingDataset,
    ProbingInstance,
    extract_candidates,
    generate_dataset,
    sample_splits,
)
