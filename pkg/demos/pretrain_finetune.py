"""Two-stage pipeline on the synthetic task: pretrain on mined pairs, fine-tune on labeled pairs.

Compares test BLEU against fine-tuning from scratch. Takes about a minute per seed.

    python3 demos/pretrain_finetune.py [seed ...]
"""
import logging
import sys

from nl2code import experiments as X

logging.basicConfig(level=logging.WARNING)
seeds = [int(s) for s in sys.argv[1:]] or [0]
for seed in seeds:
    r = X.pretrain_vs_scratch(seed=seed)
    print(f"seed {seed}: fine-tune only {r['bleu_finetune_only']:.2f}  "
          f"pretrain+fine-tune {r['bleu_pretrain_finetune']:.2f}  ({r['seconds']:.0f}s)")
