import collections
import pickle
import time

import numpy as np

from wardsim.decoding import DecodeEngine, GenerationConfig
from wardsim.evaluation import select_prompts
from wardsim.model import ModelConfig, TimelineModel, init_parameters
from wardsim.numcodec import build_logit_grid, collect_numeric_observations, fit_percentile_tables
from wardsim.records import group_by_patient
from wardsim.synthworld import SynthWorld
from wardsim.timeline import build_timeline
from wardsim.training import TrainingSchedule, save_checkpoint, train
from wardsim.vocab import GROUP_TIME, build_vocabulary, save_vocabulary, tokenize_timeline
from wardsim.numcodec import save_percentile_tables

t0 = time.monotonic()
world = SynthWorld()
rows_train, _ = world.generate_corpus(600, rng=1)
train_tl = [build_timeline(r, append_eot=True) for r in group_by_patient(rows_train).values()]
vocab = build_vocabulary(train_tl, n_bins=201)
ptable = fit_percentile_tables(collect_numeric_observations(train_tl), build_logit_grid(201, 1e-7))
tok = [tokenize_timeline(t, vocab, ptable) for t in train_tl]
config = ModelConfig(d_model=64, n_heads=4, d_k=16, d_v=16, n_blocks=3, d_ff=256, d_seq=256,
                     vocab_size=len(vocab), n_subtokens=vocab.n_subtokens)
model = TimelineModel(config)
init_parameters(model, 0)
schedule = TrainingSchedule(max_epochs=40, patience=40, batch_ramp=((0.0, 64),), micro_batch=32)
history = train(model, tok[30:], tok[:30], schedule, seed=0,
                log=lambda m: print(" ", m, flush=True))
print(f"final val {history.epochs[-1].val_loss:.3f} ({time.monotonic()-t0:.0f}s)", flush=True)
save_checkpoint("scratch_model.pt", model, vocab.content_hash())
save_vocabulary(vocab, "scratch_vocab.tsv")
save_percentile_tables(ptable, "scratch_ptable.tsv")

engine = DecodeEngine(model, vocab, ptable)
rows_test, _ = world.generate_corpus(50, rng=2)
test_tl = [build_timeline(r) for r in group_by_patient(rows_test).values()]
samples = select_prompts(test_tl, 6, np.random.default_rng(0))
s = samples[2]
out = engine.inspect(s.prompt)
probs = out["probabilities"]
tr = vocab.group_range[GROUP_TIME]
time_probs = probs[tr.start : tr.stop]
best = np.argsort(-probs)[:6]
print("boundary top tokens:", [(vocab.tokens[i].name, round(float(probs[i]), 3)) for i in best], flush=True)
families: dict = {}
for i, tkn in enumerate(vocab.tokens[tr.start : tr.stop]):
    token = engine.vocab.timecodec.tokens[tkn.time_index]
    key = "short" if token.scheme == "short" else f"day[{token.day_lo}-{token.day_hi})"
    families[key] = families.get(key, 0.0) + float(time_probs[i])
print(f"P(time)={time_probs.sum():.3f} by family:",
      sorted(families.items(), key=lambda kv: -kv[1])[:6], flush=True)

config_g = GenerationConfig(horizon_minutes=7 * 1440, n_sim=16, max_steps=400, seed=0, chunk_size=16)
res = engine.simulate_many(s.prompt, config_g, cut_minutes=s.cut_minutes)
reasons = collections.Counter(t.info.stop_reason for t in res.timelines)
print("stop reasons:", dict(reasons), "lengths:", sorted(len(t.generated) for t in res.timelines), flush=True)
gen = max(res.timelines, key=lambda t: len(t.generated))
for e in gen.generated[:30]:
    age = e.age.total_minutes - s.cut_minutes if e.age else None
    print(f"  {e.kind:11s} {e.record_type:12s} tok={e.token} val={e.value} rel={age}", flush=True)
print(f"TOTAL {time.monotonic()-t0:.0f}s")
