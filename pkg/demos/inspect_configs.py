"""Print the stage-shape table and complexity of every shipped config.

    python3 demos/inspect_configs.py
"""
from redimnet.config import load, shipped_configs
from redimnet.model import analytic_params, count_macs, format_stage_table


def main():
    for name in shipped_configs():
        cfg = load(name).model
        print(f"== {name}")
        print(format_stage_table(cfg))
        print(f"params {analytic_params(cfg):,}  MACs@2s {count_macs(cfg, 2.0) / 1e9:.3f}G\n")


if __name__ == "__main__":
    main()
