# app/models/report.py
import json
import math

METRIC_KEYS = ['snr_db', 'las_rmse_db', 'mcd_db', 'f0_rmse_cent', 'vuv_error_pct']


class UtteranceResult:
    def __init__(self, name, snr_db, saturated, las_rmse_db, mcd_db, f0_rmse_cent, vuv_error_pct,
                 num_frames, num_f0_frames):
        self.name = name
        self.snr_db = snr_db
        self.saturated = saturated
        self.las_rmse_db = las_rmse_db
        self.mcd_db = mcd_db
        self.f0_rmse_cent = f0_rmse_cent
        self.vuv_error_pct = vuv_error_pct
        self.num_frames = num_frames
        self.num_f0_frames = num_f0_frames

    def to_dict(self):
        return {
            'name': self.name,
            'snr_db': self.snr_db,
            'saturated': self.saturated,
            'las_rmse_db': self.las_rmse_db,
            'mcd_db': self.mcd_db,
            'f0_rmse_cent': self.f0_rmse_cent,
            'vuv_error_pct': self.vuv_error_pct,
            'num_frames': self.num_frames,
            'num_f0_frames': self.num_f0_frames,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


class EvalReport:
    """Per-utterance results plus means over utterances.

    F0-RMSE is undefined for utterances without common voiced frames; those
    records hold None and stay out of the F0 mean. Pairs that could not be
    scored are kept by name in ``skipped`` with the reason.
    """

    def __init__(self, records=None, skipped=None):
        self.records = list(records or [])
        self.skipped = dict(skipped or {})

    def add(self, record):
        self.records.append(record)

    def skip(self, name, reason):
        self.skipped[name] = reason

    def __len__(self):
        return len(self.records)

    def aggregate(self):
        summary = {'num_utterances': len(self.records)}
        for key in METRIC_KEYS:
            values = [getattr(r, key) for r in self.records if getattr(r, key) is not None]
            summary[key] = math.fsum(values) / len(values) if values else None
            summary[f'{key}_count'] = len(values)
        summary['saturated_count'] = sum(1 for r in self.records if r.saturated)
        summary['num_frames'] = int(sum(r.num_frames for r in self.records))
        summary['num_f0_frames'] = int(sum(r.num_f0_frames for r in self.records))
        summary['skipped_count'] = len(self.skipped)
        return summary

    def to_dict(self):
        return {
            'records': [r.to_dict() for r in self.records],
            'aggregate': self.aggregate(),
            'skipped': dict(sorted(self.skipped.items())),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self):
        """One line per utterance, then the aggregate block"""
        lines = []
        for r in self.records:
            fields = ' '.join(f"{key}={_fmt(getattr(r, key))}" for key in METRIC_KEYS)
            flag = ' saturated' if r.saturated else ''
            lines.append(f"{r.name}: {fields} frames={r.num_frames} f0_frames={r.num_f0_frames}{flag}")
        summary = self.aggregate()
        lines.append('')
        lines.append(f"[aggregate] utterances={summary['num_utterances']}")
        for key in METRIC_KEYS:
            lines.append(f"  {key} = {_fmt(summary[key])} (n={summary[f'{key}_count']})")
        lines.append(f"  saturated_snr = {summary['saturated_count']}")
        lines.append(f"  skipped = {summary['skipped_count']}")
        for name, reason in sorted(self.skipped.items()):
            lines.append(f"    {name}: {reason}")
        return '\n'.join(lines) + '\n'

    def to_tsv(self):
        header = ['name'] + METRIC_KEYS + ['saturated', 'num_frames', 'num_f0_frames']
        rows = ['\t'.join(header)]
        for r in self.records:
            values = [r.name] + [_fmt(getattr(r, key)) for key in METRIC_KEYS]
            values += [str(r.saturated).lower(), str(r.num_frames), str(r.num_f0_frames)]
            rows.append('\t'.join(values))
        return '\n'.join(rows) + '\n'


def _fmt(value):
    if value is None:
        return 'NA'
    return f"{value:.4f}"
