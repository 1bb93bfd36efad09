"""Full evaluation of a trained bundle: understanding, category scores, reconstruction and fidelity."""

from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from data.captions import located_caption
from data.corpus import Corpus
from data.render import render
from evaluation.geneval import build_prompt_set, shape_eval
from evaluation.reconstruction import fidelity_psnr, reconstruction_probe
from evaluation.understanding import understanding_eval
from pixel.trainer import images_at
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)


class EvalSettings(BaseModel):
    seed: int = 0
    prompts_per_category: int = 50
    understanding_limit: Optional[int] = None
    reconstruction_images: int = 64
    fidelity_prompts: int = 32
    keep_images: int = 16
    jobs: int = 1


def located_prompts(corpus: Corpus, limit: int):
    """Fully located captions of the first `limit` scenes with their exact renders' specs."""
    count = min(limit, len(corpus))
    return [(located_caption(corpus.specs[i]), corpus.specs[i]) for i in range(count)]


def evaluate_bundle(bundle, corpus: Corpus, settings: Optional[EvalSettings] = None) -> Tuple[Dict[str, Any], np.ndarray]:
    """Every metric family for one bundle on a held-out corpus; returns (results, kept generations)."""
    settings = settings or EvalSettings()
    results: Dict[str, Any] = {}
    results["understanding"] = understanding_eval(bundle, corpus, settings.understanding_limit)

    prompts = build_prompt_set(settings.seed, settings.prompts_per_category)
    scores, outcomes, images = shape_eval(bundle, prompts, seed=settings.seed, jobs=settings.jobs,
                                          keep_images=settings.keep_images)
    results["generation"] = scores
    results["generation_outcomes"] = outcomes

    if bundle.dit is not None and bundle.generation_source == "tokenizer" and settings.reconstruction_images:
        indices = list(range(min(settings.reconstruction_images, len(corpus))))
        sources = images_at(corpus, bundle.tokenizer.vit_config.image_size, indices)
        targets = images_at(corpus, bundle.dit.config.resolution, indices)
        results["reconstruction"] = {
            "matched": reconstruction_probe(bundle.tokenizer, bundle.dit, sources, targets,
                                            steps=bundle.sample_steps, seed=settings.seed),
            "mismatched": reconstruction_probe(bundle.tokenizer, bundle.dit, sources, targets,
                                               steps=bundle.sample_steps, seed=settings.seed, mismatched=True),
        }

    pairs = located_prompts(corpus, settings.fidelity_prompts)
    if pairs:
        generated = np.stack([bundle.generate(prompt, seed=settings.seed + i) for i, (prompt, _) in enumerate(pairs)])
        references = np.stack([render(spec, generated.shape[1]) for _, spec in pairs])
        results["fidelity"] = fidelity_psnr(generated, references)

    log_component_call(logger, "EvalSuite", "Evaluated bundle", {
        "understanding": results["understanding"].overall,
        "generation": scores.overall,
        "reconstruction": results["reconstruction"]["matched"].mean if "reconstruction" in results else None,
        "fidelity": results["fidelity"].mean if "fidelity" in results else None,
    })
    return results, images


def headline(results: Dict[str, Any]) -> Dict[str, Optional[float]]:
    """One number per metric family, as used by sweeps and ablations."""
    und = results.get("understanding")
    gen = results.get("generation")
    recon = results.get("reconstruction")
    fidelity = results.get("fidelity")
    return {
        "understanding": und.overall if und is not None else None,
        "generation": gen.overall if gen is not None else None,
        "reconstruction_psnr": recon["matched"].mean if recon else None,
        "fidelity_psnr": fidelity.mean if fidelity is not None else None,
    }
