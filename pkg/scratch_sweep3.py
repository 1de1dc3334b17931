"""Sweep 3: d_e=32 on the sharpened world; vary data cap and epochs."""
import sys
sys.path.insert(0, "src")
from dataclasses import replace
from scratch_sweep2 import run, W0
from gist.config import CbjtConfig

WF = replace(W0, zipf_exponent=1.3, beta_select=6.0, beta_click=8.0)

run("H z1.3 b6 c8 d32 ep6 cap60k", WF, CbjtConfig(source_epochs=6))
run("I z1.3 b6 c8 d32 ep6 cap120k", WF,
    CbjtConfig(source_epochs=6, source_max_events=120000))
run("J z1.3 b6 c8 d32 ep3 cap240k", WF,
    CbjtConfig(source_epochs=3, source_max_events=240000))
