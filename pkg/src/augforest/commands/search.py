import logging
from pathlib import Path

from augforest.commands.common import open_run
from augforest.config import RunConfig
from augforest.policy.io import dump_tree, to_dot
from augforest.search import (
    importance_scores,
    search_tree,
    write_importance_csv,
    write_summary_json,
    write_trace_csv,
)

logger = logging.getLogger(__name__)


def search(config: RunConfig) -> Path:
    """Search one tree on all groups pooled and write its artifacts; returns the run directory."""
    with open_run(config) as run:
        train, val = run.pooled_search_data()
        result = search_tree(run.problem, train, val, config.search_config())
        out = run.run_dir
        dump_tree(result.tree, out / 'tree.json')
        write_trace_csv(result.trace, out / 'trace.csv')
        write_importance_csv(importance_scores(result.trace), out / 'importance.csv')
        (out / 'tree.dot').write_text(to_dot(result.tree, run.registry))
        write_summary_json(result.trace, out / 'summary.json')
        logger.info(f"Wrote search artifacts to {out}")
        return out
