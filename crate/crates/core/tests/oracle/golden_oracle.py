#!/usr/bin/env python3
"""Straight-line reference for the golden fixtures in ../fixtures/goldens.json.

Shares no code with the Rust crate. Re-run to regenerate:

    python3 golden_oracle.py > ../fixtures/goldens.json
"""
import hashlib
import json
import struct


def stream_seed(master, image_id, block, sub, purpose):
    msg = b"PPSS-v1" + b"\x00" + master + b"\x00" + image_id.encode("utf-8") + b"\x00"
    msg += struct.pack(">I", block) + struct.pack(">I", sub) + bytes([purpose])
    return hashlib.sha256(msg).digest()


def keystream_words(seed):
    counter = 0
    while True:
        chunk = hashlib.sha256(seed + struct.pack(">Q", counter)).digest()
        counter += 1
        for k in range(0, 32, 4):
            yield struct.unpack(">I", chunk[k:k + 4])[0]


def fisher_yates(words, n):
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        bound = i + 1
        limit = (2**32 // bound) * bound
        while True:
            w = next(words)
            if w < limit:
                break
        j = w % bound
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def subblock_key(master, image_id, block, sub, ms):
    pix = [fisher_yates(keystream_words(stream_seed(master, image_id, block, sub, c)), ms * ms)
           for c in range(3)]
    chan = fisher_yates(keystream_words(stream_seed(master, image_id, block, sub, 3)), 3)
    return pix, chan


def fixture_pixels(width, height, k):
    out = bytearray()
    for y in range(height):
        for x in range(width):
            for c in range(3):
                out.append((37 * x + 101 * y + 59 * c + 17 * k) % 256)
    return bytes(out)


def encrypt(pixels, width, height, m, ms, master, image_id):
    out = bytearray(pixels)
    bx_count = width // m
    by_count = height // m
    per_side = m // ms
    for by in range(by_count):
        for bx in range(bx_count):
            block = by * bx_count + bx
            for sy in range(per_side):
                for sx in range(per_side):
                    sub = sy * per_side + sx
                    pix, chan = subblock_key(master, image_id, block, sub, ms)
                    x0 = bx * m + sx * ms
                    y0 = by * m + sy * ms
                    for c in range(3):
                        src = chan[c]
                        for i in range(ms * ms):
                            j = pix[src][i]
                            ox, oy = x0 + i % ms, y0 + i // ms
                            ix, iy = x0 + j % ms, y0 + j // ms
                            out[(oy * width + ox) * 3 + c] = pixels[(iy * width + ix) * 3 + src]
    return bytes(out)


FIXTURES = [
    dict(width=4, height=4, m=4, ms=2, seed=bytes(32), image_id="img0"),
    dict(width=16, height=16, m=16, ms=4, seed=bytes(range(32)),
         image_id="frankfurt/frankfurt_000000_000294_leftImg8bit.png"),
    dict(width=48, height=32, m=16, ms=8, seed=bytes([0xA5] * 32), image_id="a/b/c.png"),
    dict(width=32, height=32, m=8, ms=1, seed=bytes(range(31, -1, -1)), image_id="img-ü"),
    dict(width=64, height=48, m=16, ms=16, seed=bytes((i * 7 + 3) % 256 for i in range(32)),
         image_id="last"),
]


def main():
    zero = bytes(32)
    golden = {
        "stream_seed_zero_img0_0_0_0": stream_seed(zero, "img0", 0, 0, 0).hex(),
        "stream_seed_zero_img0_0_0_3": stream_seed(zero, "img0", 0, 0, 3).hex(),
        "stream_bytes_zero_counter0": hashlib.sha256(zero + struct.pack(">Q", 0)).hexdigest(),
        "stream_bytes_zero_counter1": hashlib.sha256(zero + struct.pack(">Q", 1)).hexdigest(),
        "fixtures": [],
    }
    for k, f in enumerate(FIXTURES):
        plain = fixture_pixels(f["width"], f["height"], k)
        cipher = encrypt(plain, f["width"], f["height"], f["m"], f["ms"], f["seed"], f["image_id"])
        entry = {
            "index": k,
            "width": f["width"],
            "height": f["height"],
            "block_size": f["m"],
            "sub_block_size": f["ms"],
            "seed_hex": f["seed"].hex(),
            "image_id": f["image_id"],
            "plain_sha256": hashlib.sha256(plain).hexdigest(),
            "cipher_sha256": hashlib.sha256(cipher).hexdigest(),
        }
        if k == 0:
            entry["cipher_bytes"] = list(cipher)
            pix, chan = subblock_key(f["seed"], f["image_id"], 0, 0, f["ms"])
            entry["key_block0_sub0"] = {"pixel_perms": pix, "channel_perm": chan}
        golden["fixtures"].append(entry)
    print(json.dumps(golden, indent=2))


if __name__ == "__main__":
    main()
