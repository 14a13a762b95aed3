"""Writes crates/core/data/hand_mask.shmk: a hand-shaped 32x32 taxel mask.

Palm block plus five finger strips (left hand, palm side, thumb on the right),
sized so exactly 548 crossings are active.
"""
import pathlib
import zlib

ROWS = COLS = 32
TARGET = 548


def build():
    m = [[0] * COLS for _ in range(ROWS)]

    def fill(r0, r1, c0, c1):
        for r in range(r0, r1):
            for c in range(c0, c1):
                m[r][c] = 1

    # fingers: little, ring, middle, index (top), thumb (right, lower)
    fill(8, 17, 2, 6)
    fill(3, 17, 7, 11)
    fill(0, 17, 12, 16)
    fill(3, 17, 17, 21)
    fill(12, 24, 24, 29)
    # palm
    fill(17, 30, 2, 22)
    fill(20, 26, 22, 24)
    return m


def main():
    m = build()
    count = sum(map(sum, m))
    assert count == TARGET, count
    body = b"SHMK" + bytes(v for row in m for v in row)
    out = pathlib.Path(__file__).resolve().parents[1] / "crates/core/data/hand_mask.shmk"
    out.write_bytes(body + zlib.crc32(body).to_bytes(4, "little"))
    for row in m:
        print("".join("#" if v else "." for v in row))
    print(count, "active ->", out)


if __name__ == "__main__":
    main()
