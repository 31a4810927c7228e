"""
Decompression between cascaded CDNs
===================================

Two CDNs in a row. The origin always serves a gzip bomb. When the CDN near
the origin (OCDN) hands the upstream CDN (UCDN) an uncompressed body, the
link between them carries the full megabyte while both outer links stay
small.
"""

from cdnconvert import PROFILES, builtin_profiles, make_scenario, reference_bomb, run_scenario, scenario_matrix

bomb = reference_bomb()

# type 1: the UCDN forwards br, the OCDN cannot serve br to it and decompresses
s = make_scenario("ccuf1", [PROFILES["Tencent"], PROFILES["CDNetworks"]], bomb, "br")
ledger = run_scenario(s)
for link in ledger.links:
    print(f"{link.name:>22}: {link.response_body_bytes:>8} body bytes")

# type 2: the UCDN deletes the header outright, and the OCDN decompresses for it
s = make_scenario("ccuf2", [PROFILES["UPYun"], PROFILES["Cloudflare"]], bomb, "br")
for event in run_scenario(s).events[0]:
    print(f"{event.node:<10} forwarded {event.forwarded_ae} -> {event.transformation}")

# sweep every pair; only combinations that show the attack survive
for kind in ("ccuf1", "ccuf2"):
    rows = scenario_matrix(builtin_profiles(), [kind], [bomb])
    print(f"\n{kind}: {len(rows)} viable chains")
    for r in rows:
        print(f"  {r.ucdn:>10} -> {r.ocdn:<10} {r.case:<4} {r.factor_2dp:>8}")
