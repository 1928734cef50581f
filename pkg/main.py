import argparse
import logging
import os
import sys
from typing import Dict, Iterable, List, Optional

import yaml

from src.generators.convolution import morph_convolve, r3s2_convolve, sample_kernel
from src.generators.diffusion import DiffusionEvolution
from src.generators.geodesics import integrate_frenet
from src.generators.morphology import MorphologyEvolution
from src.generators.pseudo_linear import PseudoLinearEvolution
from src.generators.random_walk import RandomWalkSimulator
from src.models.errors import NumericalFailure
from src.models.field import OrientationField
from src.models.params import (DiffusionParams, GeodesicInit, KernelSpec, MorphParams,
                               PseudoParams, WalkParams)
from src.utils.field_io import (read_field, write_curve_csv, write_field, write_glyphs_csv,
                                write_glyphs_obj, write_manifest)
from src.utils.field_ops import crossing_phantom, export_glyphs, minmax_sharpen, power_transform
from src.utils.kernels import morph_kernel
from src.utils.tessellation import build_tessellation

logger = logging.getLogger(__name__)

LOG_FILE = 'r3s2_enhancement.log'
THREADS_ENV = 'R3S2_THREADS'

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3

# Namespace entries that are not evolution or kernel parameters.
_RUNTIME_KEYS = {'command', 'input', 'output', 'config', 'workers', 'seed', 'verbose', 'no_manifest'}


def setup_logging(verbose: bool = False, log_file: str = LOG_FILE):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ],
        force=True
    )


def default_workers() -> int:
    """Worker count from R3S2_THREADS, falling back to the number of CPUs."""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV}={value!r}")
    return os.cpu_count() or 1


def _pick(params: Dict, keys: Iterable[str]) -> Dict:
    return {k: params[k] for k in keys if k in params}


class EnhancementPipeline:
    def __init__(self, config_path: str = "config/config.yaml", workers: Optional[int] = None,
                 seed: Optional[int] = None, write_manifests: bool = True):
        """Load the configuration and resolve the runtime settings shared by all subcommands."""
        self.config = self.load_config(config_path)
        runtime = self.config.get('runtime') or {}
        self.workers = workers or runtime.get('workers') or default_workers()
        self.seed = int(runtime.get('seed', 0) if seed is None else seed)
        self.progress = bool(runtime.get('progress', True))
        output = self.config.get('output') or {}
        self.write_manifests = write_manifests and bool(output.get('manifest', True))
        logger.info(f"Enhancement pipeline ready (workers={self.workers}, seed={self.seed})")

    def load_config(self, config_path: str) -> Dict:
        """Load configuration from YAML file."""
        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                config = yaml.safe_load(f)
            logger.info(f"Configuration loaded from {config_path}")
            return config or {}
        except Exception as e:
            logger.error(f"Error loading config: {str(e)}")
            raise

    def resolve(self, section: str, overrides: Optional[Dict] = None) -> Dict:
        """Config section with every non-None override applied on top."""
        params = dict(self.config.get(section) or {})
        params.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return params

    def _finish(self, output: str, subcommand: str, params: Dict, input_path: Optional[str] = None):
        if self.write_manifests:
            write_manifest(output, subcommand, params, input_path=input_path, seed=self.seed)
        logger.info(f"{subcommand}: output written to {output}")

    # ------------------------------------------------------------------
    # Evolutions
    # ------------------------------------------------------------------

    def diffuse(self, input_path: str, output: str, overrides: Optional[Dict] = None) -> OrientationField:
        params = self.resolve('diffusion', overrides)
        U = read_field(input_path)
        evolution = DiffusionEvolution(
            DiffusionParams(**_pick(params, ('d11', 'd33', 'd44', 't', 'dt', 'boundary', 'contrast'))),
            conservative=bool(params.get('conservative', True)), progress=self.progress)
        if params.get('contrast') is not None:
            W = evolution.run_perona_malik(U)
        else:
            W = evolution.run_enhancement(U)
        write_field(W, output)
        self._finish(output, 'diffuse', params, input_path)
        return W

    def complete(self, input_path: str, output: str, overrides: Optional[Dict] = None) -> OrientationField:
        params = self.resolve('completion', overrides)
        U = read_field(input_path)
        diffusion = DiffusionParams(d33=0.0, **_pick(params, ('d44', 'a3', 't', 'dt', 'boundary')))
        evolution = DiffusionEvolution(diffusion, progress=self.progress)
        if params.get('lam') is None:
            W = evolution.run_completion(U)
        else:
            W = evolution.k_step(U, float(params['lam']), int(params.get('k', 1)))
        write_field(W, output)
        self._finish(output, 'complete', params, input_path)
        return W

    def morph(self, mode: str, input_path: str, output: str,
              overrides: Optional[Dict] = None) -> OrientationField:
        params = self.resolve('morphology', overrides)
        morph_params = MorphParams(mode=mode, **_pick(params, ('d11', 'd44', 'eta', 't', 'dt', 'boundary',
                                                              'threshold', 'adaptive_exponent')))
        U = read_field(input_path)
        evolution = MorphologyEvolution(morph_params, progress=self.progress)
        if params.get('adaptive'):
            if mode != 'erosion':
                raise ValueError("Adaptive morphology is only defined for erosion")
            W = evolution.run_adaptive_erosion(U)
        else:
            W = evolution.run(U)
        subcommand = 'erode' if mode == 'erosion' else 'dilate'
        write_field(W, output)
        self._finish(output, subcommand, params, input_path)
        return W

    def pseudo(self, input_path: str, output: str, overrides: Optional[Dict] = None) -> OrientationField:
        params = self.resolve('pseudo', overrides)
        diffusion = DiffusionParams(**_pick(params, ('d11', 'd33', 'd44', 't', 'dt', 'boundary')))
        evolution = PseudoLinearEvolution(PseudoParams(balance=float(params['balance']), diffusion=diffusion),
                                          progress=self.progress)
        method = params.get('method', 'conjugated')
        U = read_field(input_path)
        if method == 'conjugated':
            W = evolution.run_conjugated(U)
        elif method == 'direct':
            W = evolution.run_direct(U)
        else:
            raise ValueError(f"Unsupported pseudo-linear method: {method}")
        write_field(W, output)
        self._finish(output, 'pseudo', params, input_path)
        return W

    # ------------------------------------------------------------------
    # Kernels and convolutions
    # ------------------------------------------------------------------

    def _kernel_spec(self, params: Dict) -> KernelSpec:
        return KernelSpec(**_pick(params, ('kind', 'd33', 'd44', 't', 'lam', 'k', 'se2_constant',
                                             'normalize')))

    def kernel(self, output: str, overrides: Optional[Dict] = None) -> OrientationField:
        params = self.resolve('kernel', overrides)
        tessellation = build_tessellation(int(params.get('order', 2)))
        K = sample_kernel(self._kernel_spec(params), int(params.get('radius', 3)), tessellation,
                          float(params.get('spacing', 1.0)))
        write_field(K, output)
        self._finish(output, 'kernel', params)
        return K

    def convolve(self, input_path: str, output: str, overrides: Optional[Dict] = None) -> OrientationField:
        params = self.resolve('kernel')
        params.update(self.resolve('convolution', overrides))
        U = read_field(input_path)
        mode = params.get('mode', 'linear')
        radius = params.get('radius')
        boundary = params.get('boundary', 'zero')
        if mode == 'linear':
            W = r3s2_convolve(U, self._kernel_spec(params), radius=radius, boundary=boundary,
                              check_window=bool(params.get('check_window', True)), progress=self.progress)
        elif mode in ('erosion', 'dilation'):
            morph = self.resolve('morphology', _pick(overrides or {}, ('d11', 'd44', 'eta', 't')))
            morph_params = MorphParams(mode=mode, **_pick(morph, ('d11', 'd44', 'eta', 't', 'dt')))

            def k(y, n):
                return morph_kernel(y, n, morph_params.t, morph_params)

            W = morph_convolve(U, k, int(radius or 2), mode=mode, boundary=boundary, progress=self.progress)
            params['morphology'] = morph_params.to_dict()
        else:
            raise ValueError(f"Unsupported convolution mode: {mode}")
        write_field(W, output)
        self._finish(output, 'convolve', params, input_path)
        return W

    # ------------------------------------------------------------------
    # Curves and random walks
    # ------------------------------------------------------------------

    def geodesic(self, output: str, overrides: Optional[Dict] = None):
        params = self.resolve('geodesic', overrides)
        init = GeodesicInit(**_pick(params, ('beta', 'z0', 'dz0', 'length', 'step')))
        curve = integrate_frenet(init, progress=self.progress)
        write_curve_csv(curve.samples(), output)
        self._finish(output, 'geodesic', init.to_dict())
        return curve

    def monte_carlo(self, output: str, overrides: Optional[Dict] = None) -> OrientationField:
        params = self.resolve('mc', overrides)
        kind = params.get('kind', 'enhancement')
        common = dict(step=float(params['step']), samples=int(params['samples']),
                      seed=self.seed, workers=int(self.workers))
        if kind == 'enhancement':
            walk = WalkParams.enhancement(float(params['d33']), float(params['d44']), float(params['t']),
                                          **common)
        elif kind == 'completion':
            walk = WalkParams.completion(float(params['a3']), float(params['d44']), float(params['t']),
                                         **common)
        else:
            raise ValueError(f"Unsupported random walk kind: {kind}")
        simulator = RandomWalkSimulator(walk, progress=self.progress)
        K = simulator.empirical_kernel(tuple(params['dims']), build_tessellation(int(params['order'])),
                                       float(params['spacing']))
        write_field(K, output)
        self._finish(output, 'mc', {**params, 'walk': walk.to_dict()})
        return K

    # ------------------------------------------------------------------
    # Field utilities
    # ------------------------------------------------------------------

    def glyphs(self, input_path: str, output: str, overrides: Optional[Dict] = None):
        params = self.resolve('glyphs', overrides)
        U = read_field(input_path)
        glyphs = export_glyphs(U, float(params['mu']))
        fmt = params.get('format', 'csv')
        if fmt == 'csv':
            write_glyphs_csv(glyphs, U.dims, output)
        elif fmt == 'obj':
            write_glyphs_obj(glyphs, output)
        else:
            raise ValueError(f"Unsupported glyph format: {fmt}")
        self._finish(output, 'glyphs', params, input_path)
        return glyphs

    def sharpen(self, input_path: str, output: str, overrides: Optional[Dict] = None) -> OrientationField:
        params = self.resolve('sharpen', overrides)
        U = read_field(input_path)
        method = params.get('method', 'minmax')
        if method == 'minmax':
            W = minmax_sharpen(U)
        elif method == 'power':
            W = power_transform(U, float(params['power']))
        else:
            raise ValueError(f"Unsupported sharpening method: {method}")
        write_field(W, output)
        self._finish(output, 'sharpen', params, input_path)
        return W

    def info(self, input_path: str) -> Dict:
        return read_field(input_path).summary()

    def phantom(self, output: str, overrides: Optional[Dict] = None) -> OrientationField:
        params = self.resolve('phantom', overrides)
        tessellation = build_tessellation(int(params['order']))
        U = crossing_phantom(tuple(params['shape']), tessellation, spacing=float(params['spacing']),
                             radius=float(params['radius']),
                             concentration=float(params['concentration']))
        write_field(U, output)
        self._finish(output, 'phantom', params)
        return U

    def dispatch(self, args: argparse.Namespace) -> int:
        overrides = {k: v for k, v in vars(args).items() if k not in _RUNTIME_KEYS}
        command = args.command
        if command == 'info':
            for key, value in self.info(args.input).items():
                print(f"{key}: {value}")
        elif command == 'diffuse':
            self.diffuse(args.input, args.output, overrides)
        elif command == 'complete':
            self.complete(args.input, args.output, overrides)
        elif command in ('erode', 'dilate'):
            self.morph('erosion' if command == 'erode' else 'dilation', args.input, args.output, overrides)
        elif command == 'pseudo':
            self.pseudo(args.input, args.output, overrides)
        elif command == 'kernel':
            self.kernel(args.output, overrides)
        elif command == 'convolve':
            self.convolve(args.input, args.output, overrides)
        elif command == 'geodesic':
            self.geodesic(args.output, overrides)
        elif command == 'mc':
            self.monte_carlo(args.output, overrides)
        elif command == 'glyphs':
            self.glyphs(args.input, args.output, overrides)
        elif command == 'sharpen':
            self.sharpen(args.input, args.output, overrides)
        elif command == 'phantom':
            self.phantom(args.output, overrides)
        else:
            raise ValueError(f"Unsupported subcommand: {command}")
        return EXIT_OK


class CliArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that reports malformed arguments with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default='config/config.yaml', help='Path to config file')
    common.add_argument('--workers', type=int, help=f'Worker threads (default: ${THREADS_ENV} or CPU count)')
    common.add_argument('--seed', type=int, help='Random seed for Monte Carlo runs')
    common.add_argument('--verbose', action='store_true', help='Log at DEBUG level')
    common.add_argument('--no-manifest', action='store_true', help='Skip the reproducibility manifest')
    return common


def _diffusion_flags(parser: argparse.ArgumentParser, spatial: bool = True):
    if spatial:
        parser.add_argument('--d11', type=float, help='Lateral spatial diffusion D11 = D22')
        parser.add_argument('--d33', type=float, help='Axial spatial diffusion D33')
    parser.add_argument('--d44', type=float, help='Angular diffusion D44 = D55')
    parser.add_argument('--t', type=float, help='Evolution time')
    parser.add_argument('--dt', type=float, help='Time step (default: 0.9 x stability bound)')
    parser.add_argument('--boundary', choices=('reflect', 'periodic', 'zero'), help='Spatial boundary rule')


def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(description='Crossing-preserving enhancement of orientation fields on R3xS2')
    common = _common_parser()
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('diffuse', parents=[common], help='Linear or Perona-Malik enhancement diffusion')
    p.add_argument('input')
    p.add_argument('output')
    _diffusion_flags(p)
    p.add_argument('--contrast', type=float, help='Perona-Malik contrast K')
    p.add_argument('--non-conservative', dest='conservative', action='store_const', const=False,
                   help='Plain summed angular second differences')

    p = sub.add_parser('complete', parents=[common], help='Convection-diffusion contour completion')
    p.add_argument('input')
    p.add_argument('output')
    _diffusion_flags(p, spatial=False)
    p.add_argument('--a3', type=float, help='Convection speed along A3')
    p.add_argument('--lam', type=float, help='Resolvent rate lambda (enables k-step completion)')
    p.add_argument('--k', type=int, help='Number of resolvent iterations')

    for name, text in (('erode', 'Upwind erosion'), ('dilate', 'Upwind dilation')):
        p = sub.add_parser(name, parents=[common], help=f'{text} (Hamilton-Jacobi)')
        p.add_argument('input')
        p.add_argument('output')
        p.add_argument('--d11', type=float, help='Lateral coefficient D11')
        p.add_argument('--d44', type=float, help='Angular coefficient D44')
        p.add_argument('--eta', type=float, help='Homogeneity eta in [1/2, 1]')
        p.add_argument('--t', type=float, help='Evolution time')
        p.add_argument('--dt', type=float, help='Time step')
        p.add_argument('--boundary', choices=('reflect', 'periodic', 'zero'))
        if name == 'erode':
            p.add_argument('--adaptive', action='store_const', const=True,
                           help='Angular erosion steered by the Laplace-Beltrami sign')
            p.add_argument('--threshold', type=float, help='Adaptive threshold c')
            p.add_argument('--adaptive-exponent', type=float, help='Exponent of |Laplace-Beltrami W - c|')

    p = sub.add_parser('pseudo', parents=[common], help='Pseudo-linear scale space')
    p.add_argument('input')
    p.add_argument('output')
    _diffusion_flags(p)
    p.add_argument('--balance', type=float, help='Balance C between diffusion and dilation')
    p.add_argument('--method', choices=('conjugated', 'direct'))

    def kernel_flags(q):
        q.add_argument('--kind', choices=('completion-heisenberg-kstep', 'enhancement-product',
                                          'gaussian-estimate'))
        q.add_argument('--d33', type=float)
        q.add_argument('--d44', type=float)
        q.add_argument('--t', type=float)
        q.add_argument('--lam', type=float)
        q.add_argument('--k', type=int)
        q.add_argument('--radius', type=int, help='Window half-width in voxels')

    p = sub.add_parser('kernel', parents=[common], help='Sample an analytic kernel')
    p.add_argument('output')
    kernel_flags(p)
    p.add_argument('--order', type=int, help='Tessellation order')
    p.add_argument('--spacing', type=float)

    p = sub.add_parser('convolve', parents=[common], help='Group convolution with a kernel')
    p.add_argument('input')
    p.add_argument('output')
    kernel_flags(p)
    p.add_argument('--mode', choices=('linear', 'erosion', 'dilation'))
    p.add_argument('--boundary', choices=('zero', 'periodic'))
    p.add_argument('--d11', type=float, help='Lateral coefficient of the morphological kernel')
    p.add_argument('--eta', type=float, help='Homogeneity of the morphological kernel')

    p = sub.add_parser('geodesic', parents=[common], help='Integrate a sub-Riemannian geodesic')
    p.add_argument('output')
    p.add_argument('--beta', type=float)
    p.add_argument('--z0', type=float, nargs=2)
    p.add_argument('--dz0', type=float, nargs=2)
    p.add_argument('--length', type=float)
    p.add_argument('--step', type=float)

    p = sub.add_parser('mc', parents=[common], help='Monte Carlo kernel from random walks')
    p.add_argument('output')
    p.add_argument('--kind', choices=('enhancement', 'completion'))
    p.add_argument('--d33', type=float)
    p.add_argument('--d44', type=float)
    p.add_argument('--a3', type=float)
    p.add_argument('--t', type=float)
    p.add_argument('--step', type=float)
    p.add_argument('--samples', type=int)
    p.add_argument('--dims', type=int, nargs=3)
    p.add_argument('--order', type=int)
    p.add_argument('--spacing', type=float)

    p = sub.add_parser('glyphs', parents=[common], help='Export glyph surfaces')
    p.add_argument('input')
    p.add_argument('output')
    p.add_argument('--mu', type=float, help='Glyph scale')
    p.add_argument('--format', choices=('csv', 'obj'))

    p = sub.add_parser('sharpen', parents=[common], help='Min-max normalization or power transform')
    p.add_argument('input')
    p.add_argument('output')
    p.add_argument('--method', choices=('minmax', 'power'))
    p.add_argument('--power', type=float)

    p = sub.add_parser('info', parents=[common], help='Print field dimensions and range')
    p.add_argument('input')

    p = sub.add_parser('phantom', parents=[common], help='Write a synthetic crossing phantom')
    p.add_argument('output')
    p.add_argument('--shape', type=int, nargs=3)
    p.add_argument('--order', type=int)
    p.add_argument('--spacing', type=float)
    p.add_argument('--concentration', type=float)
    p.add_argument('--radius', type=float)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main function of the enhancement command line."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    setup_logging(args.verbose)

    try:
        pipeline = EnhancementPipeline(args.config, workers=args.workers, seed=args.seed,
                                       write_manifests=not args.no_manifest)
        return pipeline.dispatch(args)
    except NumericalFailure as e:
        logger.error(f"Numerical failure: {str(e)}")
        return EXIT_NUMERICAL
    except OSError as e:
        logger.error(f"I/O error: {str(e)}")
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as e:
        logger.error(f"Invalid parameters: {str(e)}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
