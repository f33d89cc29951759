"""Small synthetic setups shared by the model-level tests."""

from fusionseq.data import FeatureSelection, build_vocabulary, make_batches, make_instances
from fusionseq.model import FusionModel, ModelConfig
from fusionseq.synthetic import SyntheticTaskSpec, generate_synthetic


def tiny_data(n=12, seed=0, **spec_kw):
    spec = SyntheticTaskSpec(seed=seed, **spec_kw)
    examples = generate_synthetic(spec, n)
    vocab = build_vocabulary(examples, min_freq=1)
    return examples, vocab, make_instances(examples)


def tiny_model(vocab, seed=0, **kw):
    cfg = dict(vocab_size=len(vocab), d=4, d_e=3, d_a=16, d_v=16, n_heads=2, att_dim=3,
               max_answer_len=4, beam_size=3)
    cfg.update(kw)
    return FusionModel(ModelConfig(**cfg), seed=seed)


def batches_for(model, vocab, instances, batch_size=4, seed=None, epoch=0):
    sel = FeatureSelection.from_model_config(model.config)
    c = model.config
    return make_batches(instances, vocab, sel, batch_size, seed=seed, epoch=epoch, d_a=c.d_a, d_v=c.d_v)
