"""Error-rate scoring and the language-separation evaluation.

error_stats computes a minimal Levenshtein alignment; among minimal
alignments it prefers the one with fewest insertions, which makes the
S/I/D split deterministic. Corpus-level rates are total errors over total
reference tokens. When a projected reference is empty, its utterance is
excluded from the error-rate aggregate but every hypothesis token still
counts toward the insertion rate: leaked tokens are exactly what the
insertion rate is meant to expose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignments import mask_labels
from .decoding import decode_ctc_subnet, rnnt_decode
from .errors import CsrtError


@dataclass(frozen=True)
class ErrorStats:
    sub: int = 0
    ins: int = 0
    dele: int = 0
    ref_len: int = 0

    @property
    def errors(self):
        return self.sub + self.ins + self.dele

    @property
    def rate(self):
        return self.errors / max(1, self.ref_len)

    def __add__(self, other):
        return ErrorStats(
            self.sub + other.sub,
            self.ins + other.ins,
            self.dele + other.dele,
            self.ref_len + other.ref_len,
        )


def error_stats(hyp, ref):
    """Minimal-edit S/I/D counts of hyp against ref.

    Minimized lexicographically by (total cost, insertions); deletions and
    substitutions then follow from the length difference.
    """
    hyp = tuple(hyp)
    ref = tuple(ref)
    H, R = len(hyp), len(ref)
    # dp[j] = (cost, insertions) for the current hyp prefix vs ref[:j].
    dp = [(j, 0) for j in range(R + 1)]
    for i in range(1, H + 1):
        prev_diag = dp[0]
        dp[0] = (i, i)
        for j in range(1, R + 1):
            up_cost, up_ins = dp[j]
            left_cost, left_ins = dp[j - 1]
            diag_cost, diag_ins = prev_diag
            if hyp[i - 1] == ref[j - 1]:
                best = (diag_cost, diag_ins)
            else:
                best = (diag_cost + 1, diag_ins)
            cand = (up_cost + 1, up_ins + 1)  # insertion of hyp[i-1]
            if cand < best:
                best = cand
            cand = (left_cost + 1, left_ins)  # deletion of ref[j-1]
            if cand < best:
                best = cand
            prev_diag = dp[j]
            dp[j] = best
    cost, ins = dp[R]
    dele = ins - (H - R)
    sub = cost - ins - dele
    return ErrorStats(sub=sub, ins=ins, dele=dele, ref_len=R)


@dataclass(frozen=True)
class MixedScore:
    """Per-utterance mixed-token stats plus per-language projections.

    `m` / `e` are None when that language's reference projection is empty
    (the rate is then reported as absent for the utterance).
    """

    mer: ErrorStats
    m: ErrorStats | None
    e: ErrorStats | None
    m_ins: int = 0
    e_ins: int = 0


def mixed_error_rate(hyp, ref, vocab):
    """Mixed error stats over all tokens, plus M (CER) and E (WER) projections."""
    proj = {}
    for lang in ("M", "E"):
        r = mask_labels(ref, lang, vocab)
        stats = error_stats(mask_labels(hyp, lang, vocab), r)
        proj[lang] = (stats if r else None, stats.ins)
    return MixedScore(
        mer=error_stats(hyp, ref),
        m=proj["M"][0],
        e=proj["E"][0],
        m_ins=proj["M"][1],
        e_ins=proj["E"][1],
    )


@dataclass
class SplitReport:
    """Corpus-level error rates for one decoded split."""

    mer: ErrorStats
    cer: ErrorStats  # language-M projection
    wer: ErrorStats  # language-E projection
    n_utts: int

    @property
    def rates(self):
        return {"MER": self.mer.rate, "CER": self.cer.rate, "WER": self.wer.rate}


def evaluate_split(model, utts, vocab, beam=10):
    """Beam-decode a split and aggregate MER plus per-language projections.

    Returns (SplitReport, hyps) where hyps maps utterance id to the decoded
    global label ids.
    """
    mer = cer = wer = ErrorStats()
    hyps = {}
    for utt in utts:
        hyp, _ = rnnt_decode(model, utt.features, beam=beam)
        hyps[utt.uid] = hyp
        score = mixed_error_rate(hyp, utt.labels, vocab)
        mer = mer + score.mer
        if score.m is not None:
            cer = cer + score.m
        else:
            cer = cer + ErrorStats(ins=score.m_ins)
        if score.e is not None:
            wer = wer + score.e
        else:
            wer = wer + ErrorStats(ins=score.e_ins)
    return SplitReport(mer=mer, cer=cer, wer=wer, n_utts=len(utts)), hyps


def eval_language_separation(model, cs_utts, vocab):
    """Score each CTC sub-net against its language's masked reference.

    Returns {'M': {'rate': ..., 'ins': ...}, 'E': ...}; `ins` is insertions
    per reference token and captures other-language leakage.
    """
    if not model.arch.has_ctc_heads:
        raise CsrtError("language-separation evaluation needs a variant with CTC heads")
    bound = model.bind(None)
    totals = {"M": ErrorStats(), "E": ErrorStats()}
    leaked = {"M": 0, "E": 0}
    for utt in cs_utts:
        for lang in ("M", "E"):
            hyp = decode_ctc_subnet(model, bound, utt.features, lang, vocab)
            ref = mask_labels(utt.labels, lang, vocab)
            stats = error_stats(hyp, ref)
            if ref:
                totals[lang] = totals[lang] + stats
            else:
                leaked[lang] += stats.ins
    out = {}
    for lang in ("M", "E"):
        denom = max(1, totals[lang].ref_len)
        out[lang] = {
            "rate": totals[lang].rate,
            "ins": (totals[lang].ins + leaked[lang]) / denom,
        }
    return out


def dump_frame_posteriors(model, x, out_path, vocab):
    """Write one CSV row per frame: blank mass, unit mass, top unit, per language.

    Plot-ready view of the two monolingual heads over one utterance.
    """
    if not model.arch.has_ctc_heads:
        raise CsrtError("posterior dump needs a variant with CTC heads")
    bound = model.bind(None)
    heads = {}
    for lang in ("M", "E"):
        h = model.encode(bound, x, "enc_m" if lang == "M" else "enc_e")
        heads[lang] = np.exp(model.ctc_head(bound, h, lang).data)
    T = heads["M"].shape[0]
    lines = ["frame,m_blank,m_units,m_top,e_blank,e_units,e_top"]
    for t in range(T):
        cells = [str(t)]
        for lang in ("M", "E"):
            p = heads[lang][t]
            top_local = 1 + int(p[1:].argmax())
            cells.extend(
                [
                    f"{p[0]:.9f}",
                    f"{p[1:].sum():.9f}",
                    vocab.surface(vocab.to_global(lang, top_local)),
                ]
            )
        lines.append(",".join(cells))
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_path


def format_split_report(title, report):
    """Plain-text metric row in the shape of the paper-style results table."""
    lines = [
        f"{'Split':<14} {'Utts':>5} {'MER':>7} {'CER':>7} {'WER':>7}",
        f"{title:<14} {report.n_utts:>5} "
        f"{100 * report.mer.rate:>7.2f} {100 * report.cer.rate:>7.2f} {100 * report.wer.rate:>7.2f}",
    ]
    return "\n".join(lines)


def format_separation_report(results):
    lines = [
        f"{'Sub-net':<10} {'Rate':>7} {'INS':>7}",
        f"{'M (CER)':<10} {100 * results['M']['rate']:>7.2f} {100 * results['M']['ins']:>7.2f}",
        f"{'E (WER)':<10} {100 * results['E']['rate']:>7.2f} {100 * results['E']['ins']:>7.2f}",
    ]
    return "\n".join(lines)
