import csv
import os

import numpy as np
import pytest
import yaml

from main import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, EnhancementPipeline, main
from src.utils.field_io import manifest_path, read_field


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _run(config_path, *argv):
    return main(list(argv) + ['--config', config_path])


@pytest.fixture
def phantom_file(workdir, config_path):
    path = str(workdir / 'phantom.r3s2f')
    assert _run(config_path, 'phantom', path, '--shape', '5', '5', '5', '--order', '0') == EXIT_OK
    return path


def test_phantom_and_info(phantom_file, config_path, capsys):
    U = read_field(phantom_file)
    assert U.dims == (5, 5, 5)
    assert U.n_orientations == 12
    assert _run(config_path, 'info', phantom_file) == EXIT_OK
    out = capsys.readouterr().out
    assert 'dims: [5, 5, 5]' in out
    assert 'n_orientations: 12' in out


def test_diffuse_writes_field_and_manifest(phantom_file, workdir, config_path):
    out = str(workdir / 'diffused.r3s2f')
    assert _run(config_path, 'diffuse', phantom_file, out, '--t', '0.1', '--seed', '9') == EXIT_OK
    W = read_field(out)
    assert W.dims == (5, 5, 5)
    with open(manifest_path(out), encoding='utf-8') as f:
        manifest = yaml.safe_load(f)
    assert manifest['subcommand'] == 'diffuse'
    assert manifest['seed'] == 9
    assert manifest['parameters']['t'] == 0.1


def test_reruns_reproduce_field_and_manifest(phantom_file, workdir, config_path):
    out = str(workdir / 'rerun.r3s2f')
    runs = []
    for _ in range(2):
        assert _run(config_path, 'diffuse', phantom_file, out, '--t', '0.1', '--seed', '9') == EXIT_OK
        with open(out, 'rb') as f, open(manifest_path(out), 'rb') as m:
            runs.append((f.read(), m.read()))
    assert runs[0] == runs[1]


def test_no_manifest_flag(phantom_file, workdir, config_path):
    out = str(workdir / 'sharp.r3s2f')
    assert _run(config_path, 'sharpen', phantom_file, out, '--no-manifest') == EXIT_OK
    assert os.path.exists(out)
    assert not os.path.exists(manifest_path(out))


def test_morphology_and_convolution_commands(phantom_file, workdir, config_path):
    eroded = str(workdir / 'eroded.r3s2f')
    assert _run(config_path, 'erode', phantom_file, eroded, '--t', '0.04', '--dt', '0.02') == EXIT_OK
    assert np.all(read_field(eroded).data <= read_field(phantom_file).data + 1e-6)
    convolved = str(workdir / 'convolved.r3s2f')
    assert _run(config_path, 'convolve', phantom_file, convolved, '--mode', 'erosion',
                '--radius', '1') == EXIT_OK
    assert read_field(convolved).dims == (5, 5, 5)


def test_kernel_and_geodesic_commands(workdir, config_path):
    kernel = str(workdir / 'kernel.r3s2f')
    assert _run(config_path, 'kernel', kernel, '--kind', 'gaussian-estimate', '--radius', '1',
                '--order', '0') == EXIT_OK
    assert read_field(kernel).dims == (3, 3, 3)
    curve = str(workdir / 'curve.csv')
    assert _run(config_path, 'geodesic', curve, '--length', '2', '--step', '0.1') == EXIT_OK
    with open(curve, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['s', 'x', 'y', 'z', 'kappa', 'tau']
    assert len(rows) == 22


def test_monte_carlo_is_reproducible(workdir, config_path):
    outputs = [str(workdir / name) for name in ('a.r3s2f', 'b.r3s2f')]
    for out in outputs:
        assert _run(config_path, 'mc', out, '--samples', '200', '--t', '0.1', '--dims', '5', '5', '5',
                    '--order', '0', '--seed', '4') == EXIT_OK
    with open(outputs[0], 'rb') as a, open(outputs[1], 'rb') as b:
        assert a.read() == b.read()
    assert read_field(outputs[0]).mass() == pytest.approx(1.0, rel=1e-5)


def test_exit_codes(phantom_file, workdir, config_path):
    assert main(['diffuse']) == EXIT_USAGE
    assert main(['transmogrify', 'x']) == EXIT_USAGE
    assert _run(config_path, 'info', str(workdir / 'missing.r3s2f')) == EXIT_IO
    assert _run(config_path, 'diffuse', phantom_file, str(workdir / 'x.r3s2f'), '--dt', '10') == EXIT_NUMERICAL
    assert _run(config_path, 'erode', phantom_file, str(workdir / 'y.r3s2f'), '--eta', '0.2') == EXIT_USAGE


def test_pipeline_overrides_win_over_config(config_path, workdir):
    pipeline = EnhancementPipeline(config_path, workers=2, seed=5)
    assert pipeline.workers == 2 and pipeline.seed == 5
    params = pipeline.resolve('diffusion', {'t': 0.3, 'd44': None})
    assert params['t'] == 0.3
    assert params['d44'] == pipeline.config['diffusion']['d44']
