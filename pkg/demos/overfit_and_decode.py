"""Train the small transformer on 16 synthetic pairs, then decode with greedy, beam and sampling.

    python3 demos/overfit_and_decode.py
"""
from nl2code import experiments as X
from nl2code import model as M
from nl2code import pipeline as P
from nl2code import synthetic
from nl2code import train as TR
from nl2code.decode import DecodeConfig

pairs = synthetic.overfit_pairs(16, seed=0)
src_tok, tgt_tok = P.train_pair_tokenizers("rule_code", None, pairs)
cfg = M.ModelConfig(**dict(X.SMALL, dropout=0.0), src_vocab_size=len(src_tok), tgt_vocab_size=len(tgt_tok))
model = M.build(cfg, seed=0)
ids = P.encode_pairs(src_tok, tgt_tok, pairs, cfg.max_len)
_, hist = TR.train_loop(model, ids, None, TR.TrainConfig(epochs=200, batch_size=16, lr=3e-3,
                                                         patience=200, valid_bleu=False))
print(f"train loss {hist[0]['train_loss']:.3f} -> {hist[-1]['train_loss']:.4f}")
print(f"token accuracy {TR.token_accuracy_tf(model, ids):.3f}")

queries = [s for s, _ in pairs[:4]]
for name, dc in [("greedy", DecodeConfig(strategy="greedy", max_length=20)),
                 ("beam", DecodeConfig(strategy="beam", beam_size=4, num_return_sequences=3, max_length=20)),
                 ("sample", DecodeConfig(strategy="sample", temperature=0.8, top_k=5, max_length=20, seed=1))]:
    print(f"\n{name}")
    for q, cands in zip(queries, P.translate(model, src_tok, tgt_tok, queries, dc)):
        print(f"  {q!r}")
        for text, score in cands:
            print(f"     {score:8.4f}  {text}")
