"""
Compression-format conversion at a single edge
==============================================

An origin that never compresses sits behind one CDN. The client asks for
gzip; the CDN strips or rewrites Accept-Encoding on the way up, fetches the
full body, and compresses it at the edge. The attacker's link carries a few
kilobytes while the origin link carries the whole megabyte.
"""

from cdnconvert import PROFILES, make_scenario, reference_bomb, report_for, run_scenario
from cdnconvert.http_model import HTTP_ONLY

# a 1 MiB run of '0' bytes, stored gzip-compressed at level 9
bomb = reference_bomb()
print(f"bomb: {len(bomb.compressed)} compressed bytes for {bomb.declared_uncompressed_length}")

# CDN77 deletes Accept-Encoding before forwarding, so the origin sends identity
s = make_scenario("cccf", [PROFILES["CDN77"]], bomb, "gzip", overhead=HTTP_ONLY)
ledger = run_scenario(s)
for link in ledger.links:
    print(f"{link.name:>16}: {link.request_bytes:>6} B up, {link.response_bytes:>8} B down")

# what each node did on the way through
for event in ledger.events[0]:
    print(f"{event.node} forwarded {event.forwarded_ae} and {event.transformation}")

print("amplification", report_for(s).factor_2dp)

# the same experiment for every profile and both client codings
for name, p in sorted(PROFILES.items()):
    row = [name]
    for coding in ("gzip", "br"):
        if coding == "br" and not any(c.token == "br" for c in p.edge.codings):
            row.append("   -")
            continue
        row.append(report_for(make_scenario("cccf", [p], bomb, coding)).factor_2dp)
    print("{:<12} {:>8} {:>8}".format(*row))
