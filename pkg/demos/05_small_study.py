"""
A small Monte Carlo study
=========================

Run a few replications of the default design and print the summary
tables.  Each replication takes 15 to 25 seconds on one core; set
HDBLP_THREADS to use more.  The full 200-replication study is
``hdblp study``.
"""

import sys

from hdblp.study import load_config, run_study, summary_markdown

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 4
cfg = load_config(overrides={"study.reps": reps})


def progress(record, seconds):
    print(f"replication {record['rep'] + 1}/{reps} done in {seconds:.1f}s", flush=True)


result = run_study(cfg, progress=progress)
print(summary_markdown(result.summary()))
