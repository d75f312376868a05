import numpy as np

from morphprobe.store import EmbeddingRecord, Store, StoreHeader


def build_record(sentence_id, pieces_per_word, layers, hidden, fill):
    """One record whose word vectors come from ``fill(word_index, layer)``;
    CLS/SEP rows and every subword row of a word share that vector."""
    spans = []
    cursor = 1
    for n in pieces_per_word:
        spans.append((cursor, cursor + n))
        cursor += n
    num_subwords = cursor + 1
    tensor = np.zeros((layers, num_subwords, hidden), dtype=np.float32)
    for layer in range(layers):
        for wi, (start, end) in enumerate(spans):
            vec = np.asarray(fill(wi, layer), dtype=np.float32)
            tensor[layer, start:end, :] = vec
    return EmbeddingRecord(sentence_id=sentence_id, spans=tuple(spans), tensor=tensor)


def build_store(records, layers, hidden, name="synthetic"):
    header = StoreHeader(
        num_layers_total=layers,
        hidden=hidden,
        num_sentences=len(records),
        model_name=name,
    )
    return Store(header=header, records=list(records))
