from main import EnhancementPipeline
import logging
import os

from src.generators.diffusion import DiffusionEvolution
from src.generators.morphology import MorphologyEvolution
from src.models.params import DiffusionParams, MorphParams
from src.utils.field_io import write_field
from src.utils.field_ops import crossing_phantom, minmax_sharpen
from src.utils.tessellation import build_tessellation

# Configure logging
logging.basicConfig(level=logging.INFO)


def run_simple_simulation(output_dir: str = "output"):
    """Enhance a small crossing phantom: diffusion, sharpening, then erosion."""
    try:
        pipeline = EnhancementPipeline()
        phantom_cfg = pipeline.config['phantom']
        tessellation = build_tessellation(phantom_cfg['order'])
        U = crossing_phantom(tuple(phantom_cfg['shape']), tessellation,
                             spacing=phantom_cfg['spacing'],
                             concentration=phantom_cfg['concentration'])

        diffusion = DiffusionEvolution(DiffusionParams(d33=1.0, d44=0.04, t=1.0))
        enhanced = diffusion.run_enhancement(U)
        sharpened = minmax_sharpen(enhanced)
        eroded = MorphologyEvolution(MorphParams(d44=0.4, t=0.4, dt=0.02)).run_erosion(sharpened)

        os.makedirs(output_dir, exist_ok=True)
        for name, field in (('phantom', U), ('enhanced', enhanced), ('sharpened', sharpened),
                            ('eroded', eroded)):
            summary = field.summary()
            print(f"\n{'='*50}")
            print(f"Field: {name}")
            print(f"Dims: {summary['dims']} x {summary['n_orientations']}")
            print(f"Range: [{summary['min']:.6g}, {summary['max']:.6g}]")
            print(f"Mass: {summary['mass']:.6g}")
            write_field(field, os.path.join(output_dir, f"{name}.r3s2f"))

    except Exception as e:
        print(f"Simulation error: {str(e)}")
        raise


if __name__ == "__main__":
    run_simple_simulation()
