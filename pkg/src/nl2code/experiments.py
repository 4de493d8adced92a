"""Small end-to-end experiments on the synthetic task (overfit probe, pretrain vs. no pretrain)."""
from __future__ import annotations

import logging
import time
from dataclasses import replace

from . import model as M
from . import pipeline as P
from . import synthetic
from . import train as TR
from .evaluation import corpus_bleu, tokenize_side

log = logging.getLogger(__name__)

SMALL = dict(d_model=64, n_heads=4, n_encoder_layers=2, n_decoder_layers=2, d_ff=128,
             max_len=32, dropout=0.1)


def test_bleu(model, src_tok, tgt_tok, pairs):
    hyps = P.greedy_texts(model, src_tok, tgt_tok, [s for s, _ in pairs], max_length=30)
    return corpus_bleu([tokenize_side(h, "code") for h in hyps],
                       [tokenize_side(t, "code") for _, t in pairs])


def overfit_probe(n_pairs=16, epochs=300, seed=0, lr=3e-3):
    """Train the small transformer on ``n_pairs`` fixed pairs; returns a result dict."""
    t0 = time.time()
    pairs = synthetic.overfit_pairs(n_pairs, seed)
    src_tok, tgt_tok = P.train_pair_tokenizers("rule_code", None, pairs)
    cfg = M.ModelConfig(**dict(SMALL, dropout=0.0), src_vocab_size=len(src_tok),
                        tgt_vocab_size=len(tgt_tok))
    model = M.build(cfg, seed=seed)
    ids = P.encode_pairs(src_tok, tgt_tok, pairs, cfg.max_len)
    tc = TR.TrainConfig(epochs=epochs, batch_size=n_pairs, lr=lr, patience=epochs,
                        valid_bleu=False, seed=seed)
    _, hist = TR.train_loop(model, ids, None, tc)
    return {
        "token_accuracy": TR.token_accuracy_tf(model, ids),
        "bleu": test_bleu(model, src_tok, tgt_tok, pairs),
        "initial_loss": hist[0]["train_loss"],
        "final_loss": hist[-1]["train_loss"],
        "epochs": len(hist),
        "seconds": time.time() - t0,
    }


def pretrain_vs_scratch(seed=0, n_mined=5000, n_labeled=200, pretrain_epochs=6,
                        finetune_epochs=40, lr=2e-3, finetune_lr=1e-3, patience=5):
    """Test BLEU of (pretrain on mined -> fine-tune on labeled) against fine-tune only.

    Both arms share tokenizers, architecture and the fine-tuning recipe; the
    only difference is the initialisation of the fine-tuning stage.
    """
    t0 = time.time()
    task = synthetic.pretrain_task(seed, n_mined=n_mined, n_labeled=n_labeled)
    mined = task["mined"].pairs()
    labeled = task["labeled"].pairs()
    valid = task["valid"].pairs()
    test = task["test"].pairs()
    src_tok, tgt_tok = P.train_pair_tokenizers("rule_code", None, mined + labeled)
    cfg = M.ModelConfig(**SMALL, src_vocab_size=len(src_tok), tgt_vocab_size=len(tgt_tok))
    enc = lambda ps: P.encode_pairs(src_tok, tgt_tok, ps, cfg.max_len)  # noqa: E731
    mined_ids, lab_ids, valid_ids = enc(mined), enc(labeled), enc(valid)

    ft = TR.TrainConfig(epochs=finetune_epochs, batch_size=16, lr=finetune_lr, patience=patience,
                        valid_bleu=False, seed=seed)

    scratch = M.build(cfg, seed=seed)
    best, _ = TR.train_loop(scratch, lab_ids, valid_ids, replace(ft, lr=lr))
    scratch = best.to_model()
    bleu_scratch = test_bleu(scratch, src_tok, tgt_tok, test)

    pre = M.build(cfg, seed=seed)
    pt = TR.TrainConfig(epochs=pretrain_epochs, batch_size=32, lr=lr, patience=pretrain_epochs,
                        valid_bleu=False, seed=seed)
    best_pre, _ = TR.train_loop(pre, mined_ids, valid_ids, pt)
    tuned = best_pre.to_model()
    best_ft, _ = TR.train_loop(tuned, lab_ids, valid_ids, ft)
    tuned = best_ft.to_model()
    bleu_pre = test_bleu(tuned, src_tok, tgt_tok, test)
    out = {"seed": seed, "bleu_finetune_only": bleu_scratch, "bleu_pretrain_finetune": bleu_pre,
           "seconds": time.time() - t0}
    log.info("pretrain experiment %s", out)
    return out
