#!/usr/bin/env python3
"""Writes an n-qubit quantum Fourier transform as OpenQASM 2."""
import sys


def qft(n: int) -> str:
    lines = ["OPENQASM 2.0;", 'include "qelib1.inc";', f"qreg q[{n}];", f"creg c[{n}];"]
    for j in range(n):
        lines.append(f"h q[{j}];")
        for k in range(j + 1, n):
            lines.append(f"cu1(pi/{2 ** (k - j)}) q[{k}],q[{j}];")
    for j in range(n // 2):
        lines.append(f"swap q[{j}],q[{n - 1 - j}];")
    lines.append("measure q -> c;")
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 10
    sys.stdout.write(qft(n))
