"""
What the defences buy
=====================

Three configuration changes, each applied to the rows that show the attack:
an origin that can compress both gzip and br, a UCDN that forwards the
client's header unchanged, and an OCDN that never converts between codings.
Rows where the factor stays high point at the behaviour the change does not
reach, such as a CDN that deletes the header before the origin sees it.
"""

from cdnconvert import builtin_profiles, reference_bomb, report_for, scenario_matrix

bomb = reference_bomb()

cases = [
    ("cccf", "origin_dual_codec"),
    ("ccuf2", "ucdn_laziness"),
    ("ccuf1", "ocdn_no_convert"),
]
for kind, mitigation in cases:
    rows = scenario_matrix(builtin_profiles(), [kind], [bomb])
    print(f"\n{mitigation} against {kind}")
    for r in rows:
        after = report_for(rows.scenarios[r.scenario_id].with_mitigations(mitigation))
        chain = r.ucdn + (f" -> {r.ocdn}" if r.ocdn else "")
        flag = "" if after.factor <= 1.2 else "  still amplifies"
        print(f"  {chain:<26} {r.case:<4} {r.factor_2dp:>8} -> {after.factor_2dp:>8}{flag}")
