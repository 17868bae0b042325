#!/usr/bin/env python3
"""Rebuild an ml-100k directory (u.data, u.item, u.user, u.genre) from the
copy of MovieLens-100k shipped inside the RecBole wheel on PyPI.

Ratings, users and genre flags are identical to the GroupLens archive.
Titles, release dates and IMDb URLs are approximations: RecBole keeps only
the bare title and the release year.

Usage: reconstruct_ml100k.py OUT_DIR [--wheel PATH]
"""
import argparse
import glob
import os
import subprocess
import sys
import tempfile
import zipfile

GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
PREFIX = "recbole/dataset_example/ml-100k/ml-100k."


def find_wheel(explicit):
    if explicit:
        return explicit
    tmp = tempfile.mkdtemp()
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "recbole==1.2.1"],
        check=True,
    )
    return glob.glob(os.path.join(tmp, "recbole-*.whl"))[0]


def rows(zf, name):
    text = zf.read(PREFIX + name).decode("utf-8")
    lines = [l for l in text.split("\n") if l]
    return [l.split("\t") for l in lines[1:]]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--wheel")
    args = ap.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)
    zf = zipfile.ZipFile(find_wheel(args.wheel))

    with open(os.path.join(args.out_dir, "u.data"), "w", newline="\n") as f:
        for u, i, r, t in rows(zf, "inter"):
            f.write(f"{u}\t{i}\t{int(float(r))}\t{int(float(t))}\n")

    with open(os.path.join(args.out_dir, "u.user"), "w", newline="\n") as f:
        for u, age, g, occ, z in rows(zf, "user"):
            f.write(f"{u}|{age}|{g}|{occ}|{z}\n")

    with open(os.path.join(args.out_dir, "u.genre"), "w", newline="\n") as f:
        for idx, g in enumerate(GENRES):
            f.write(f"{g}|{idx}\n")
        f.write("\n")

    with open(os.path.join(args.out_dir, "u.item"), "wb") as f:
        for iid, title, year, classes in rows(zf, "item"):
            tokens = set(classes.split())
            unknown = [t for t in tokens if t not in GENRES]
            if unknown:
                sys.exit(f"item {iid}: unrecognised genre tokens {unknown}")
            flags = "|".join("1" if g in tokens else "0" for g in GENRES)
            if year.isdigit():
                full_title, date = f"{title} ({year})", f"01-Jan-{year}"
            else:
                full_title, date = "unknown", ""
            line = f"{iid}|{full_title}|{date}|||{flags}\n"
            f.write(line.encode("latin-1", errors="replace"))


if __name__ == "__main__":
    main()
