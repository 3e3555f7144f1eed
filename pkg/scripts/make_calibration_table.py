"""Regenerate the shipped toy-corpus calibration table (assets/toy_calibration.json).

Deterministic: the same corpus seed, grid, sample count, and stream key
always produce the same table.
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from topofuse.augment import calibrate, default_combo_templates
from topofuse.corpus import CorpusConfig, generate_corpus
from topofuse.image import apply_mask, extract_roi
from topofuse.rng import Stream

CORPUS = CorpusConfig(n_per_class=12, size=32, noise_sigma=0.04, seed=7)
GRID = 17
SAMPLES = 10
STREAM_KEY = 3


def main():
    corpus = generate_corpus(CORPUS)
    items = [apply_mask(img, extract_roi(img)) for img in corpus.images]
    table = calibrate(items, default_combo_templates(), grid=GRID,
                      m_samples=SAMPLES, stream=Stream(key=STREAM_KEY),
                      dataset=f"shape-corpus-{CORPUS.seed}")
    out = Path(__file__).resolve().parent.parent / "assets" / "toy_calibration.json"
    out.parent.mkdir(exist_ok=True)
    table.save(out)
    print(f"wrote {out} with {len(table.entries)} entries:")
    for e in table.entries:
        ranges = " ".join(
            o.kind if o.parameterless else f"{o.kind}[{o.lo:.3f},{o.hi:.3f}]"
            for o in e.ops)
        print(f"  {e.band:6s} {ranges}  medians {e.median_lo:.3f}..{e.median_hi:.3f}")


if __name__ == "__main__":
    main()
