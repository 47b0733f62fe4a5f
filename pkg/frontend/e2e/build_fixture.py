"""Build the tiny trained-world artifacts the live e2e test serves.

Idempotent: skips work when the artifacts already exist.
"""

import json
import pathlib
import sys

HERE = pathlib.Path(__file__).parent
ART = HERE / "artifacts"


def main() -> int:
    from r2e import cli

    if (ART / "reasoner" / "checkpoint.r2e").exists():
        print("fixture artifacts present, skipping")
        return 0
    ART.mkdir(parents=True, exist_ok=True)
    steps = [
        ["synthworld", "--out", str(ART / "world"), "--entities", "6",
         "--sentences-per-entity", "25", "--seed", "11"],
    ]
    for argv in steps:
        assert cli.main(argv) == 0, argv

    n_docs = len({json.loads(line)["doc_id"] for line in
                  (ART / "world" / "docs.jsonl").read_text().splitlines()})
    n1 = int(0.7 * n_docs)
    n2 = max(1, int(0.15 * n_docs))
    sizes = f"{n1},{n2},{n_docs - n1 - n2}"
    pipeline = [
        ["ingest", "--docs", str(ART / "world" / "docs.jsonl"),
         "--dictionary", str(ART / "world" / "dictionary.tsv"),
         "--out", str(ART / "corpus"), "--policy", "random",
         "--sizes", sizes, "--seed", "1"],
        ["train-retriever", "--corpus", str(ART / "corpus"),
         "--out", str(ART / "retriever"), "--layers", "1", "--heads", "2",
         "--hidden", "16", "--epochs", "6", "--batch-size", "16",
         "--lr", "0.01"],
        ["build-index", "--corpus", str(ART / "corpus"),
         "--retriever", str(ART / "retriever"),
         "--out", str(ART / "evidence.r2eidx")],
        ["train-reasoner", "--corpus", str(ART / "corpus"),
         "--retriever", str(ART / "retriever"),
         "--index", str(ART / "evidence.r2eidx"),
         "--out", str(ART / "reasoner"), "--k", "4", "--heads", "2",
         "--inducing-points", "4", "--encoder-blocks", "1",
         "--decoder-blocks", "1", "--epochs", "10", "--batch-size", "16",
         "--lr", "0.003", "--weight-decay", "0"],
    ]
    for argv in pipeline:
        print("::", " ".join(argv[:2]), file=sys.stderr)
        code = cli.main(argv)
        assert code == 0, f"{argv} -> exit {code}"
    print("fixture ready")
    return 0


if __name__ == "__main__":
    sys.exit(main())
