#!/usr/bin/env python3
"""Regenerate the Sioux Falls TNTP files and the 39-bus MATPOWER case.

usage: convert_sources.py <aequilibrae sioux falls project dir> <pypower package dir>

The Sioux Falls project is the one shipped in aequilibrae's reference files
(project_database.sqlite plus matrices/demand.omx); the power case is
pypower's case39.py. Output goes next to this script.
"""
import importlib.util
import os
import sqlite3
import sys

import h5py

here = os.path.dirname(os.path.abspath(__file__))
sf_dir, pyp_dir = sys.argv[1], sys.argv[2]


def fmt(x):
    return repr(float(x)).rstrip("0").rstrip(".") if float(x) != int(x) else str(int(x))


db = sqlite3.connect(os.path.join(sf_dir, "project_database.sqlite"))
rows = db.execute(
    "select a_node, b_node, capacity_ab, free_flow_time, b, power from links order by link_id"
).fetchall()
nodes = {r[0] for r in rows} | {r[1] for r in rows}
with open(os.path.join(here, "SiouxFalls_net.tntp"), "w") as f:
    f.write(f"<NUMBER OF ZONES> {len(nodes)}\n<NUMBER OF NODES> {len(nodes)}\n<FIRST THRU NODE> 1\n")
    f.write(f"<NUMBER OF LINKS> {len(rows)}\n<END OF METADATA>\n\n\n")
    f.write("~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;\n")
    for a, b, cap, t0, alpha, power in rows:
        # the public distribution lists length equal to free-flow time
        f.write(f"\t{a}\t{b}\t{cap}\t{fmt(t0)}\t{fmt(t0)}\t{alpha}\t{fmt(power)}\t0\t0\t1\t;\n")

omx = h5py.File(os.path.join(sf_dir, "matrices", "demand.omx"), "r")
mat = omx["data"]["matrix"][:]
taz = omx["lookup"]["taz"][:]
with open(os.path.join(here, "SiouxFalls_trips.tntp"), "w") as f:
    f.write(f"<NUMBER OF ZONES> {len(taz)}\n<TOTAL OD FLOW> {mat.sum():.1f}\n<END OF METADATA>\n\n\n")
    for i, r in enumerate(taz):
        f.write(f"Origin \t{int(r)}\n")
        cells = [f"{int(s):5d} : {mat[i, j]:8.1f};" for j, s in enumerate(taz)]
        for k in range(0, len(cells), 5):
            f.write("  ".join(cells[k : k + 5]) + "\n")
        f.write("\n")

spec = importlib.util.spec_from_file_location("case39", os.path.join(pyp_dir, "case39.py"))
sys.modules.setdefault("numpy", __import__("numpy"))
mod = importlib.util.module_from_spec(spec)
spec.loader.exec_module(mod)
ppc = mod.case39()
with open(os.path.join(here, "case39.m"), "w") as f:
    f.write("function mpc = case39\n%% 39-bus New England system (MATPOWER format)\n")
    f.write("mpc.version = '2';\n")
    f.write(f"mpc.baseMVA = {fmt(ppc['baseMVA'])};\n")
    for name in ["bus", "gen", "branch", "gencost"]:
        f.write(f"\nmpc.{name} = [\n")
        for row in ppc[name]:
            f.write("\t" + "\t".join(fmt(x) for x in row) + ";\n")
        f.write("];\n")
