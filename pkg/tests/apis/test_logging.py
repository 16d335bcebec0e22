import logging

import pytest

from segerr.apis.data import EvalConfig
from segerr.apis.logging import EvaluationLogger
from segerr.metrics import aggregate, evaluate_scene
from segerr.names import MetricType


@pytest.fixture
def reports(fake_source):
    cfg = EvalConfig(num_classes=3, radius_m=0.05, min_component_size=5)
    return [evaluate_scene(s.cloud, s.gt, s.pred, cfg) for s in fake_source]


def test_finish_uses_the_given_aggregator(reports):
    seen = []

    def first_only(batch):
        seen.append(list(batch))
        return batch[0]

    evaluation = EvaluationLogger(first_only)
    for report in reports:
        evaluation.new_scene(report)
    assert evaluation.finish() is reports[0]
    assert seen == [reports]
    assert evaluation.names == [f"scene {i}" for i in range(len(reports))]


def test_logs_scenes_and_aggregate(reports, caplog):
    evaluation = EvaluationLogger(aggregate, headline=(MetricType.MIOU,))
    with caplog.at_level(logging.INFO):
        evaluation.new_scene(reports[0], name="kitchen")
        evaluation.new_scene(reports[1])
        total = evaluation.finish()
    assert total == aggregate(reports[:2])
    assert evaluation.result is total
    assert "kitchen: mIoU=" in caplog.text
    assert "aggregate over 2 scenes" in caplog.text


def test_nothing_to_finish():
    with pytest.raises(ValueError, match=r"No scene was reported"):
        EvaluationLogger(aggregate).finish()
