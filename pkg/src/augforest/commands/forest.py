import json
import logging
from pathlib import Path

from augforest.commands.common import open_run
from augforest.config import RunConfig
from augforest.forest import learn_forest, search_group_trees, write_history_csv
from augforest.model.checkpoint import make_checkpoint, save_checkpoint
from augforest.policy.io import dump_forest, dump_tree, to_dot
from augforest.search import importance_scores, write_importance_csv, write_trace_csv

logger = logging.getLogger(__name__)


def forest(config: RunConfig) -> Path:
    """Learn per-group trees and group weights; returns the run directory."""
    with open_run(config) as run:
        bilevel = config.bilevel_config()
        searches = search_group_trees(run.problem, run.search_dataset(), config.search_config(), config.threads)
        result = learn_forest(
            run.dataset,
            run.problem,
            config.search_config(),
            bilevel,
            config.threads,
            trees={g: s.tree for g, s in searches.items()},
        )

        out = run.run_dir
        trees_dir = out / 'trees'
        trees_dir.mkdir(exist_ok=True)
        for group_id, tree in result.forest.trees:
            dump_tree(tree, trees_dir / f"group_{group_id}.json")
            (trees_dir / f"group_{group_id}.dot").write_text(to_dot(tree, run.registry, f"group_{group_id}"))
            write_trace_csv(searches[group_id].trace, trees_dir / f"group_{group_id}_trace.csv")
            write_importance_csv(
                importance_scores(searches[group_id].trace), trees_dir / f"group_{group_id}_importance.csv"
            )
        dump_forest(result.forest, out / 'forest.json')
        write_history_csv(result.history, result.forest.group_ids, out / 'history.csv')
        steps = bilevel.iterations * bilevel.inner_steps
        save_checkpoint(make_checkpoint(run.problem.spec, result.theta, steps, config.seed), out / 'checkpoint.json')
        summary = {
            'groups': list(result.forest.group_ids),
            'weights': list(result.forest.weights),
            'q': list(result.q),
            'initial_val_loss': result.history[0].val_loss,
            'final_val_loss': result.history[-1].val_loss,
            'final_weighted_train_loss': result.history[-1].weighted_train_loss,
            'N_w': result.history[-1].effective_size,
        }
        (out / 'summary.json').write_text(json.dumps(summary, indent=2) + '\n')
        logger.info(f"Wrote forest artifacts to {out}")
        return out
