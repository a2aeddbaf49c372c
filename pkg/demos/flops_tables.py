"""
Counting FLOPs for MoE and MEO stacks
=====================================

Matrix products only, one multiply-accumulate = 2 FLOPs, vocabulary head
included. Selecting more experts multiplies the MoE cost, while MEO only
pays for merging weights once per sequence.
"""

from meo.cost_model import BERT_BASE, BERT_SMALL, Variant, total_flops

# BERT-Small, MoE, growing the number of selected experts
print("m    MoE       MEO")
for m in (1, 2, 4, 8, 16, 32):
    moe = total_flops(BERT_SMALL.with_(m_selected=m)).total_flops
    meo = total_flops(BERT_SMALL.with_(m_selected=m, variant=Variant.MEO)).total_flops
    print(f"{m:<4} {moe / 1e9:6.2f}G  {meo / 1e9:6.2f}G")

# BERT-Base with 16 experts, 4 selected
vanilla = total_flops(BERT_BASE.with_(variant=Variant.VANILLA))
for variant in Variant:
    report = total_flops(BERT_BASE.with_(variant=variant))
    extra = report.total_flops / vanilla.total_flops - 1
    print(f"{variant.value:<10} {report.total_flops / 1e9:6.2f}G  (+{100 * extra:5.1f}% over vanilla)")

# the breakdown shows where the MEO overhead lives
for name, value in total_flops(BERT_BASE.with_(variant=Variant.MEO)).as_dict().items():
    print(f"  {name:<22}{value:>16,}")
