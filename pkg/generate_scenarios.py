import argparse
from pathlib import Path

import yaml

from src.services.scenario_factory import random_scenario

parser = argparse.ArgumentParser(description="Write random grid scenarios as scenario files")
parser.add_argument("--count", type=int, default=10)
parser.add_argument("--first-seed", type=int, default=1)
parser.add_argument("--out", default="scenarios/random")
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

for seed in range(args.first_seed, args.first_seed + args.count):
    scenario = random_scenario(seed)
    data = scenario.model_dump(mode="json", exclude_defaults=True)
    path = out / f"{scenario.name}.scenario"
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")

print(f"Success! Generated {args.count} scenarios in {out}/")
