"""Independent string-based encoder used as a test oracle.

Deliberately naive: planes are Python strings of '0'/'1' and the symbol table
is transliterated directly, so this shares no bit-twiddling code with the
production codec. Slow, only for cross-checking.
"""


def oracle_compress_bits(words):
    """Return the encoded bitstream for one block as a '0'/'1' string."""
    assert len(words) == 32
    base = words[0]
    out = "000" if base == 0 else "1" + format(base, "032b")

    deltas = [(words[i + 1] - words[i]) % (1 << 33) for i in range(31)]
    dbp = ["".join(format(d, "033b")[k] for d in deltas) for k in range(33)]
    dbx = [dbp[0]] + [
        "".join("1" if a != b else "0" for a, b in zip(dbp[k - 1], dbp[k]))
        for k in range(1, 33)
    ]

    def flush(run):
        if run == 1:
            return "01"
        if run >= 2:
            return "001" + format(run - 2, "05b")
        return ""

    run = 0
    for x, p in zip(dbx, dbp):
        if "1" not in x:
            run += 1
            continue
        out += flush(run)
        run = 0
        if "0" not in x:
            out += "00000"
        elif "1" not in p:
            out += "00001"
        elif x.count("1") == 2 and "11" in x:
            out += "00010" + format(x.find("11"), "05b")
        elif x.count("1") == 1:
            out += "00011" + format(x.find("1"), "05b")
        else:
            out += "1" + x
    out += flush(run)
    return out
