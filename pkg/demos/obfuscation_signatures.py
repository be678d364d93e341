"""
How far apart obfuscated commands land
======================================

Fingerprint a batch of ordinary shell commands plus a hex-wrapped payload
under each embedding strategy and compare the Hamming spread.
"""

import numpy as np

from cliprov.embedding import pairwise_hamming, select_embedding, simhash_bits
from cliprov.synth import HEX_GTCACHE

benign = [f"{c} {f}" for c in ("cat", "ls -la", "tail -n 50", "grep -c ssh")
          for f in ("/etc/hosts", "/var/log/syslog", "/tmp", "README.md", "/etc/passwd")]
payload = f"sh -c echo {HEX_GTCACHE} | xxd -r -p | sh"

rep = select_embedding(benign + [payload])
for strategy, s in rep.scores.items():
    print(f"{strategy.value:16s} separability {s:.3f}")
print("chosen:", rep.chosen.value)

order = sorted(rep.vectors)
sig = simhash_bits(np.stack([rep.vectors[c] for c in order]))
d = pairwise_hamming(sig)
k = order.index(payload)
rest = [i for i in range(len(order)) if i != k]
print(f"payload vs others: {d[k, rest].mean():.1f} bits")
print(f"benign vs benign:  {d[np.ix_(rest, rest)][np.triu_indices(len(rest), 1)].mean():.1f} bits")
