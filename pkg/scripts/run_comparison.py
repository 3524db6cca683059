"""Model comparison on a config file, followed by the text table and SVG charts.

    python scripts/run_comparison.py configs/desk.ini --output results/desk
"""
import argparse
import sys

from hedgedrl import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--output", default="results/comparison")
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()
    run = ["run", args.config, "--output", args.output]
    for item in args.set:
        run += ["--set", item]
    code = cli.main(run)
    if code:
        return code
    return cli.main(["report", str(cli.output_dir(args.output))])


if __name__ == "__main__":
    sys.exit(main())
