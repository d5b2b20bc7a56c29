"""txv-extract: manifest-driven caption and video feature extraction."""

import argparse
import sys
from pathlib import Path

from .manifest import ManifestError, load_manifest
from .textfeat import extract_text
from .videofeat import extract_video, write_report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="txv-extract",
        description="Extract .txvf feature banks from captions and videos",
    )
    parser.add_argument("manifest", help="extraction manifest (JSON)")
    parser.add_argument(
        "--only",
        choices=("text", "video"),
        default=None,
        help="restrict to one modality",
    )
    args = parser.parse_args(argv)

    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.only in (None, "text") and manifest.text_features:
            written = extract_text(manifest)
            for kind, path in written.items():
                print(f"{kind}\t{path}")
        if args.only in (None, "video") and manifest.video_features:
            written, report = extract_video(manifest)
            for kind, path in written.items():
                print(f"{kind}\t{path}")
            report_path = Path(manifest.out_dir) / "extraction_report.tsv"
            write_report(report, report_path)
            print(f"report\t{report_path}")
            if any(r.status != "ok" for r in report):
                print("warning: some videos were skipped; see the report",
                      file=sys.stderr)
    except RuntimeError as exc:  # model load failures carry a hint
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IOError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
