"""Optional end-to-end integration run on a user-supplied corpus.

Requires a reading-time corpus in the generic long CSV layout (see
ingest/README.md), network/model access for a Hugging Face causal LM, and
the ingest package's ``models`` extra. Not part of the test suite: the
desk-scale suites run corpus-free. Asserts only the directional claims:

  * the optimal temperature lands in (2, 3),
  * the log-likelihood gain at T* improves on T = 1,
  * the scaled-surprisal predictors are significant at p < 0.001.

Usage:
  python scripts/integration_run.py --corpus-file corpus.csv \
      --corpus natural_stories --model-id gpt2 --out out/ \
      [--frequency-counts counts.json] [--workers 4]
"""

import argparse
import json
import sys
from pathlib import Path

from surpingest.corpus import preprocess, read_custom_corpus
from surpingest.extract import TransformersScorer, extract_logits
from surpingest.formats import write_rts_csv, write_words_jsonl
from surpingest.tag import tag_metadata

from surpscale.analysis import fit_at_temperature, model_specs, paper_grid, sweep
from surpscale.lme import lrt
from surpscale.store import load_tables, read_archive


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus-file", required=True)
    ap.add_argument("--corpus", default="custom",
                    choices=["dundee", "natural_stories", "brown", "custom"])
    ap.add_argument("--model-id", default="gpt2")
    ap.add_argument("--out", required=True)
    ap.add_argument("--frequency-counts", help="JSON file: lowercased word -> count")
    ap.add_argument("--subject-scores", help="JSON file: subj_id -> correct answers")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = read_custom_corpus(args.corpus_file, corpus=args.corpus)
    scores = json.loads(Path(args.subject_scores).read_text()) if args.subject_scores else None
    rows, audit = preprocess(rows, args.corpus, subject_scores=scores)
    print("preprocessing audit:", audit)

    scorer = TransformersScorer(args.model_id)
    archive_path = out / "archive.scla"
    words_path = out / "words.jsonl"
    words = extract_logits(rows, scorer, archive_path, words_path)

    counts = None
    if args.frequency_counts:
        counts = json.loads(Path(args.frequency_counts).read_text())
    ne_tagger = pos_tagger = None
    try:
        from surpingest.tag import transformers_ne_tagger

        ne_tagger = transformers_ne_tagger()
    except Exception as exc:  # tagger optional; absence only narrows factor tables
        print(f"NE tagger unavailable ({exc}); named-entity factors will be skipped")
    try:
        from surpingest.tag import nltk_pos_tagger

        pos_tagger = nltk_pos_tagger()
    except Exception as exc:
        print(f"POS tagger unavailable ({exc}); POS factors will be skipped")
    words = tag_metadata(words, ne_tagger=ne_tagger, pos_tagger=pos_tagger,
                         frequency_counts=counts)
    write_words_jsonl(words_path, words)

    rts_path = out / "rts.csv"
    write_rts_csv(rts_path, [(w.word_id, subj, rt)
                             for row, w in zip(rows, words)
                             for subj, rt in row.rts.items()])

    archive = read_archive(archive_path)
    loaded_words, loaded_rts = load_tables(words_path, rts_path, token_count=len(archive))
    with_zones = all(w.zones for w in loaded_words)
    base_spec, target_spec = model_specs("model1", with_zones=with_zones)

    report = sweep(archive, loaded_words, loaded_rts, base_spec, target_spec,
                   paper_grid(), workers=args.workers)
    t_star = report.t_star
    gain_1 = report.point_at(1.0).delta_llh_x1000
    gain_star = report.point_at(t_star).delta_llh_x1000
    print(f"t_star={t_star}  delta_llh(1)={gain_1:.3f}  delta_llh(T*)={gain_star:.3f}"
          f"  improvement={report.improvement_pct}")

    base_fit, _ = fit_at_temperature(archive, loaded_words, loaded_rts, base_spec, t_star)
    target_fit, _ = fit_at_temperature(archive, loaded_words, loaded_rts, target_spec, t_star)
    test = lrt(target_fit, base_fit, df=3)
    print(f"LRT at T*: chi2={test.chi2:.2f} df={test.df} p={test.p_value:.3g}")

    ok = True
    if not (2.0 < t_star < 3.0):
        print(f"FAIL: t_star {t_star} outside (2, 3)")
        ok = False
    if not gain_star > gain_1:
        print("FAIL: no improvement over T = 1")
        ok = False
    if not test.p_value < 0.001:
        print("FAIL: scaled surprisal not significant at p < 0.001")
        ok = False
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
