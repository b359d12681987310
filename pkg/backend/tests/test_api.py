import pytest
from fastapi.testclient import TestClient

from backend.app import api
from backend.app.main import app, create_app
from backend.app.models import Method
from backend.app.orchestrator import Orchestrator
from backend.app.wmf import WmfSolveError

client = TestClient(app)


def test_root():
    r = client.get('/')
    assert r.status_code == 200
    assert r.json()['status'] == 'ok'
    assert r.json()['methods'] == [m.value for m in Method]


def test_create_app_mounts_routes():
    paths = {route.path for route in create_app().routes}
    assert {'/', '/metrics', '/api/experiments', '/api/synth'} <= paths


def test_synth_and_experiment(tmp_path, monkeypatch):
    monkeypatch.setattr(api, "OUTPUT_ROOT", tmp_path)
    monkeypatch.setattr(api, "orchestrator", Orchestrator(output_root=tmp_path))

    r = client.post('/api/synth', json={'name': 'tiny', 'm': 60, 'n': 40, 'd_true': 2, 'seed': 4})
    assert r.status_code == 200
    path = r.json()['path']
    assert path.endswith('tiny.csv')

    r = client.post(
        '/api/experiments',
        json={
            'dataset_path': path,
            'method': 'wmf',
            'd': 2,
            'sweeps': 2,
            'cutoffs': [5, 10],
            'n_jobs': 1,
            'output_dir': 'api_run',
        },
    )
    assert r.status_code == 200
    body = r.json()
    assert body['method'] == 'wmf'
    assert len(body['reports']) == 1
    assert (tmp_path / 'api_run' / 'metrics.csv').exists()


def test_invalid_experiment_is_rejected():
    r = client.post('/api/experiments', json={'method': 'wmf'})
    assert r.status_code == 422


def test_missing_dataset_is_rejected(tmp_path, monkeypatch):
    monkeypatch.setattr(api, "OUTPUT_ROOT", tmp_path)
    monkeypatch.setattr(api, "orchestrator", Orchestrator(output_root=tmp_path))
    r = client.post('/api/experiments', json={'dataset_path': str(tmp_path / 'nope.csv'), 'method': 'wmf'})
    assert r.status_code == 422


@pytest.fixture
def sandbox(tmp_path, monkeypatch):
    root = tmp_path / "root"
    dataset = root / "data" / "tiny.csv"
    dataset.parent.mkdir(parents=True)
    dataset.write_text("user_id,item_id,rating\n1,1,1\n")
    monkeypatch.setattr(api, "OUTPUT_ROOT", root)
    monkeypatch.setattr(api, "orchestrator", Orchestrator(output_root=root))
    return root, dataset


@pytest.mark.parametrize("output_dir", ["../escape", "runs/../../escape"])
def test_output_dir_must_stay_inside_root(sandbox, output_dir):
    root, dataset = sandbox
    r = client.post(
        '/api/experiments', json={'dataset_path': str(dataset), 'method': 'wmf', 'output_dir': output_dir}
    )
    assert r.status_code == 422
    assert 'output_dir' in r.json()['detail']
    assert not (root.parent / 'escape').exists()


def test_absolute_output_dir_is_rejected(sandbox):
    root, dataset = sandbox
    target = root / 'abs_run'
    r = client.post(
        '/api/experiments', json={'dataset_path': str(dataset), 'method': 'wmf', 'output_dir': str(target)}
    )
    assert r.status_code == 422
    assert not target.exists()


def test_dataset_outside_roots_is_rejected(sandbox, tmp_path):
    outside = tmp_path / 'outside.csv'
    outside.write_text("user_id,item_id,rating\n1,1,1\n")
    for field in ('dataset_path', 'prepared_path'):
        r = client.post('/api/experiments', json={field: str(outside), 'method': 'wmf'})
        assert r.status_code == 422
        assert field in r.json()['detail']


def test_singular_solve_is_a_client_error(sandbox, monkeypatch):
    _, dataset = sandbox

    def singular(config):
        raise WmfSolveError("normal matrix for row 0 is singular; use a regularization coefficient λ > 0")

    monkeypatch.setattr(api.orchestrator, "run_experiment", singular)
    r = client.post('/api/experiments', json={'dataset_path': str(dataset), 'method': 'wmf', 'lambda_u': 0.0})
    assert r.status_code == 422
    assert 'λ > 0' in r.json()['detail']


def test_metrics_endpoint():
    r = client.get('/metrics')
    assert r.status_code == 200
    assert 'pecf_wmf_solve_seconds' in r.text
