"""Leave-one-node-out attribution and heatmap export."""

import json

import numpy as np
import pytest

from heatnet.errors import AttributionError, ExportError
from heatnet.hetgraph import DEFAULT_TYPES, HeteroGraph, TypeSet
from heatnet.explain import (
    causal_contribution,
    explain_graph,
    export_heatmap,
    parse_heatmap_csv,
    top_k_ids,
)
from heatnet.model import Model, ModelConfig
from heatnet.seeding import rng_for
from heatnet.testing import random_labeled_graph

TYPES3 = TypeSet(DEFAULT_TYPES.names[:3])


def make_model(seed=0, feature_dim=4):
    cfg = ModelConfig(feature_dim=feature_dim, types=TYPES3.names, hidden_dim=4,
                      heads=2, n_layers=2, dropout=0.0)
    return Model.init(cfg, rng_for(seed, "init"))


class TestCausalContribution:
    def test_constant_model_gives_zero_everywhere(self):
        rng = np.random.default_rng(0)
        g = random_labeled_graph(rng, TYPES3, n_nodes=6, feature_dim=4)
        model = make_model()
        model.pool.classifier_w.data = np.zeros_like(model.pool.classifier_w.data)
        for nid in g.node_ids:
            assert causal_contribution(model, g, g.label, nid) == 0.0

    def test_duplicate_nodes_share_delta(self):
        # two nodes with identical type, feature, and (self-loop) edges are
        # exchangeable under mean aggregation
        feat = [1.0, -0.5, 2.0, 0.3]
        other = [0.2, 0.1, -1.0, 0.8]
        g = HeteroGraph.from_lists(
            TYPES3,
            nodes=[(0, "neoplastic", feat), (1, "neoplastic", feat),
                   (2, "inflammatory", other)],
            edges=[(0, 0, [1.0]), (1, 1, [1.0]), (2, 2, [1.0]),
                   (0, 2, [0.5]), (2, 0, [0.5]), (1, 2, [0.5]), (2, 1, [0.5])],
            label=1,
        )
        model = make_model(seed=1)
        d0 = causal_contribution(model, g, 1, 0)
        d1 = causal_contribution(model, g, 1, 1)
        assert d0 == pytest.approx(d1, abs=1e-12)

    def test_single_node_graph_rejected(self):
        g = HeteroGraph.from_lists(TYPES3, nodes=[(0, "neoplastic", [1.0, 0.0, 0.0, 0.0])],
                                   edges=[(0, 0, [1.0])], label=0)
        with pytest.raises(AttributionError):
            causal_contribution(make_model(), g, 0, 0)


class TestExplainGraph:
    def test_single_node_graph_yields_error_entry(self):
        g = HeteroGraph.from_lists(TYPES3, nodes=[(0, "neoplastic", [1.0, 0.0, 0.0, 0.0])],
                                   edges=[(0, 0, [1.0])], label=0)
        attr = explain_graph(make_model(), g)
        assert len(attr.entries) == 1
        assert attr.entries[0].error is not None
        assert attr.entries[0].delta is None
        assert attr.n_forward_evals == 1

    def test_eval_count_is_nodes_plus_one(self):
        rng = np.random.default_rng(1)
        g = random_labeled_graph(rng, TYPES3, n_nodes=9, feature_dim=4)
        attr = explain_graph(make_model(seed=2), g)
        assert attr.n_forward_evals == 10
        assert len(attr.entries) == 9

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        g = random_labeled_graph(rng, TYPES3, n_nodes=6, feature_dim=4)
        model = make_model(seed=3)
        a = explain_graph(model, g)
        b = explain_graph(model, g)
        assert [(e.node_id, e.delta) for e in a.entries] == \
               [(e.node_id, e.delta) for e in b.entries]

    def test_matches_naive_per_node_recomputation(self):
        rng = np.random.default_rng(3)
        g = random_labeled_graph(rng, TYPES3, n_nodes=10, feature_dim=4)
        model = make_model(seed=4)
        attr = explain_graph(model, g)
        by_id = {e.node_id: e.delta for e in attr.entries}
        for nid in g.node_ids:
            assert by_id[nid] == causal_contribution(model, g, g.label, nid)

    def test_sorted_by_descending_magnitude(self):
        rng = np.random.default_rng(4)
        g = random_labeled_graph(rng, TYPES3, n_nodes=8, feature_dim=4)
        attr = explain_graph(make_model(seed=5), g)
        mags = [abs(e.delta) for e in attr.entries]
        assert mags == sorted(mags, reverse=True)

    def test_invariant_to_node_relabeling(self):
        rng = np.random.default_rng(5)
        g = random_labeled_graph(rng, TYPES3, n_nodes=7, feature_dim=4)
        model = make_model(seed=6)
        base = {e.node_id: e.delta for e in explain_graph(model, g).entries}

        offset = 100
        relabeled = HeteroGraph(
            types=g.types,
            node_ids=tuple(nid + offset for nid in g.node_ids),
            node_types=g.node_types,
            features=g.features,
            edge_src=g.edge_src + offset,
            edge_dst=g.edge_dst + offset,
            edge_attrs=g.edge_attrs,
            label=g.label,
            coords=g.coords)
        shifted = {e.node_id: e.delta for e in explain_graph(model, relabeled).entries}
        for nid, delta in base.items():
            assert shifted[nid + offset] == delta


class TestExport:
    def make_attr(self, seed=6, n_nodes=6):
        rng = np.random.default_rng(seed)
        g = random_labeled_graph(rng, TYPES3, n_nodes=n_nodes, feature_dim=4)
        return explain_graph(make_model(seed=7), g, graph_id="g0", model_id="m0")

    def test_round_trip_recovers_identical_deltas(self, tmp_path):
        attr = self.make_attr()
        csv_path = tmp_path / "heat.csv"
        export_heatmap(attr, csv_path, tmp_path / "heat.json")
        rows = parse_heatmap_csv(csv_path)
        scored = [e for e in attr.entries if e.delta is not None]
        assert [(r[0], r[3]) for r in rows] == [(e.node_id, e.delta) for e in scored]

    def test_top_k_ids_match_csv_order(self, tmp_path):
        attr = self.make_attr(seed=7)
        csv_path = tmp_path / "heat.csv"
        json_path = tmp_path / "heat.json"
        export_heatmap(attr, csv_path, json_path, top_k=3)
        summary = json.loads(json_path.read_text())
        rows = parse_heatmap_csv(csv_path)
        assert summary["top_k"] == [r[0] for r in rows[:3]]
        assert summary["min"] == min(r[3] for r in rows)
        assert summary["max"] == max(r[3] for r in rows)

    def test_missing_coordinates_rejected(self, tmp_path):
        rng = np.random.default_rng(8)
        g = random_labeled_graph(rng, TYPES3, n_nodes=4, feature_dim=4, with_coords=False)
        attr = explain_graph(make_model(seed=8), g)
        with pytest.raises(ExportError) as exc:
            export_heatmap(attr, tmp_path / "x.csv")
        assert "0" in str(exc.value)

    def test_header_only_for_empty_attribution(self, tmp_path):
        from heatnet.explain import Attribution
        empty = Attribution(graph_id=None, model_id=None, label=0, full_loss=0.0,
                            entries=(), n_forward_evals=1)
        csv_path = tmp_path / "empty.csv"
        export_heatmap(empty, csv_path, tmp_path / "empty.json")
        assert csv_path.read_text().strip() == "node_id,x,y,delta"

    def test_top_k_helper(self):
        attr = self.make_attr(seed=9)
        ids = top_k_ids(attr, 2)
        assert len(ids) == 2
        assert ids[0] == attr.entries[0].node_id
