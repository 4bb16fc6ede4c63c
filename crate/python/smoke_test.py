"""Smoke test for the Python bindings.

Build first with `cargo build --release -p omg-py`, then run
`python3 python/smoke_test.py`. The script copies the built library to a
temporary `omg.so` so it can be imported without installing anything.
Set OMG_LIB to point at a specific build of libomg.so.
"""

import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def find_library():
    if os.environ.get("OMG_LIB"):
        return Path(os.environ["OMG_LIB"])
    names = ["libomg.so", "libomg.dylib", "omg.dll"]
    candidates = [ROOT / "target" / profile / name for profile in ("release", "debug") for name in names]
    found = [p for p in candidates if p.exists()]
    if not found:
        sys.exit("no built library found; run `cargo build --release -p omg-py` first")
    return max(found, key=lambda p: p.stat().st_mtime)


def main():
    work = Path(tempfile.mkdtemp(prefix="omg-smoke-"))
    suffix = ".pyd" if sys.platform == "win32" else ".so"
    shutil.copy(find_library(), work / f"omg{suffix}")
    sys.path.insert(0, str(work))
    import omg

    scene, cameras = omg.synth(gaussians=2000, seed=1, cameras=3, width=64, height=64, mean_scale=0.03)
    assert len(scene) == 2000 and len(cameras) == 3
    assert len(scene.sh_rest[0]) == 45

    ply = work / "scene.ply"
    scene.save_ply(str(ply))
    again = omg.load_ply(str(ply))
    assert again.positions == scene.positions

    data = omg.encode(scene, cameras, preset="m", iterations=100, seed=0)
    assert data == omg.encode(scene, cameras, preset="m", iterations=100, seed=0)
    report = json.loads(omg.info(data))
    assert report["index_bits_per_gaussian"] == 114
    assert report["file_bytes"] == len(data)

    decoded = omg.decode(data)
    assert len(decoded) == report["gaussians"] <= len(scene)

    ref = scene.render(cameras[0])
    out = decoded.render(cameras[0])
    assert (ref.width, ref.height) == (64, 64)
    assert len(out.data) == 64 * 64 * 3
    assert omg.psnr(ref, ref) == 100.0
    quality = omg.psnr(ref, out)
    assert 10.0 < quality < 100.0
    assert 0.0 < omg.ssim(ref, out) <= 1.0
    out.save_png(str(work / "view.png"))

    unpruned = omg.encode(scene, prune=False, svq=False, iterations=20)
    assert json.loads(omg.info(unpruned))["gaussians"] == 2000

    for bad, exc in [
        (lambda: omg.decode(b"not a container"), omg.DataError),
        (lambda: omg.encode(scene, cameras, tau=1.5), ValueError),
        (lambda: omg.encode(scene, cameras, preset="huge"), ValueError),
        (lambda: omg.load_ply(str(work / "missing.ply")), OSError),
    ]:
        try:
            bad()
        except exc:
            pass
        else:
            raise AssertionError(f"expected {exc.__name__}")

    shutil.rmtree(work, ignore_errors=True)
    print(f"python smoke test passed: {report['gaussians']} Gaussians, {len(data)} bytes, PSNR {quality:.2f} dB")


if __name__ == "__main__":
    main()
