"""Metrics on a toy prediction set: BLEU, ROUGE, quality bins, parsability and a bootstrap test."""
from nl2code import evaluation as EV

refs = ["app.run(debug=True)", "time.sleep(1)", "len(s)", "list(set(t))", "tuple(t)",
        "r = requests.get(url)", "isinstance(obj, str)", "getattr(obj, 'attr')"]
sys_a = ["app.debug()", "sleep(1)", "len(s)", "[x for x in t]", "tuple(t)",
         "r = requests.download(url)", "isinstance(obj, string)", "obj.attr()"]
sys_b = ["app.run(debug=True)", "time.sleep(1)", "len(s)", "list(set(t))", "tuple(i) for",
         "r = requests.get(url)", "isinstance(obj, str)", "getattr(obj, attr)"]

for name, hyps in (("A", sys_a), ("B", sys_b)):
    rep = EV.evaluate(hyps, refs)
    print(f"system {name}: corpus BLEU {rep.corpus_bleu:.2f}, ROUGE-L f1 {rep.rouge['rougeL']['f1']:.3f}, "
          f"parsable {rep.parsable_count}/{len(hyps)}, exact {rep.topk_accuracy:.2f}")
    print(f"  quality {rep.quality_bins}")

tok = lambda xs: [EV.tokenize_side(x, "code") for x in xs]  # noqa: E731
res = EV.paired_bootstrap(None, tok(sys_a), tok(sys_b), tok(refs), n_samples=10000, seed=0)
print(f"bootstrap win ratio A {res.win_ratio_a:.3f}  B {res.win_ratio_b:.3f}  p {res.p_value:.3f}")
