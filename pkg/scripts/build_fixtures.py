#!/usr/bin/env python3
"""Regenerate the synthetic dataset and replay cassettes under fixtures/.

Cassettes are keyed by request fingerprints, so they must be rebuilt whenever
the default prompt templates or the synthetic transcripts change. Replies are
produced by a scripted responder and recorded through the real orchestrator.

    python scripts/build_fixtures.py [--seed 7]
"""

from __future__ import annotations

import argparse
import json
import random
import re
import shutil
from pathlib import Path

from phqscreen import knowledge, orchestrator, transcripts
from phqscreen.backend import BackendSpec, Cassette, RecordingBackend, ScriptedBackend

ROOT = Path(__file__).resolve().parents[1]
FIX = ROOT / "fixtures"
SYN = FIX / "synthetic"
REPLIES = FIX / "replies"

# participant -> PHQ-8 total
TOTALS = {300: 3, 301: 12, 302: 7, 303: 0, 304: 15, 305: 5,
          306: 6, 307: 11, 308: 16, 309: 14, 310: 2, 311: 20}
SPLITS = {"train": [300, 301, 302, 303, 304], "dev": [305, 306],
          "test": [307, 308, 309, 310, 311]}
TABLE4_IDS = [300, 306, 308, 309, 311]
SAMPLE_SESSION_ID = 305  # label total 5, matching the assigned score in the sample session

# Task 1 likelihoods the synthetic model reports (None: persistently out of range).
LIKELIHOODS = {300: 2, 301: 5, 302: 4, 303: None, 304: 6, 305: 3,
               306: 3, 307: 4, 308: 6, 309: 5, 310: 1, 311: 7}
NEEDS_REPAIR = {310}  # first reply omits the answer line
GARBLED_STAGE2 = {306}  # stage 2 never yields a breakdown

TABLE2_ROWS = [
    ("Ellie", "hi i'm ellie thanks for coming in today"),
    ("Ellie", "i was created to talk to people in a safe and secure environment"),
    ("Ellie", "how are you doing today"),
    ("Participant", "good"),
    ("Ellie", "that's good"),
    ("Ellie", "where are you from originally"),
    ("Participant", "atlanta georgia"),
    ("Ellie", "really"),
    ("Ellie", "why'd you move to l_a"),
    ("Participant", "um my parents are from here um"),
    ("Ellie", "how do you like l_a"),
    ("Participant", "i love it"),
    ("Ellie", "what are some things you really like about l_a"),
    ("Participant", "i like the weather"),
    ("Participant", "i like the opportunities"),
    ("Participant", "um"),
    ("Participant", "yes"),
]

QUESTIONS = [
    "how are you doing today", "where are you from originally",
    "what do you do to relax", "how have you been sleeping",
    "how have you been feeling lately", "what are you most proud of",
    "when was the last time you felt really happy", "tell me about your family",
]
NEUTRAL = [
    "i'm doing good", "los angeles california", "i like to go hiking", "pretty good",
    "my family is close", "<laughter> yeah", "i work in an office", "mhm",
    "i enjoy cooking on weekends", "i graduated last year", "",
]
LOW = [
    "i don't sleep much anymore", "i've been feeling down a lot", "i'm tired all the time",
    "i don't really enjoy things like before", "i feel like a failure sometimes",
    "it's hard to focus on anything", "i just stay home mostly", "um i don't know",
]

KNOWLEDGE = {
    "phq8.txt": (
        "Placeholder paraphrase for tests. The PHQ-8 asks how often, over the last two "
        "weeks, a person was bothered by eight problems: little interest or pleasure; "
        "feeling down or hopeless; sleep trouble; tiredness; appetite change; feeling bad "
        "about oneself; trouble concentrating; moving or speaking slowly or restlessness. "
        "Each item scores 0 (not at all) to 3 (nearly every day); totals range 0-24 and "
        "10 or more is the usual positive screen."
    ),
    "dsm5.txt": (
        "Placeholder paraphrase for tests. A major depressive episode involves depressed "
        "mood or loss of interest for at least two weeks together with further symptoms "
        "such as sleep or appetite change, fatigue, worthlessness, poor concentration or "
        "psychomotor change, causing distress or impairment. Supply the licensed text "
        "for real runs."
    ),
    "data_description.txt": (
        "Placeholder data description. Each record holds one participant's responses "
        "from a semi-structured interview with a virtual interviewer, joined into a "
        "single text where './' ends each response. Labels are PHQ-8 totals."
    ),
}
TRAINING_EXAMPLES = [
    {"excerpt": "i'm doing good./ i like to go hiking./", "label": "Likelihood 1/7; PHQ-8 2"},
    {"excerpt": "i don't sleep much anymore./ i'm tired all the time./",
     "label": "Likelihood 6/7; PHQ-8 15"},
]


def write_dataset(rng: random.Random) -> None:
    if SYN.exists():
        shutil.rmtree(SYN)
    (SYN / "transcripts").mkdir(parents=True)
    (SYN / "splits").mkdir()
    for pid, total in TOTALS.items():
        if pid == 300:
            rows = TABLE2_ROWS
        else:
            pool = LOW if total >= 10 else NEUTRAL
            rows = []
            for q in rng.sample(QUESTIONS, 6):
                rows.append(("Ellie", q))
                rows.append(("Participant", rng.choice(pool)))
        t, lines = 0.0, ["start_time\tstop_time\tspeaker\tvalue"]
        for speaker, text in rows:
            dur = round(rng.uniform(0.5, 4.0), 2)
            lines.append(f"{t:.2f}\t{t + dur:.2f}\t{speaker}\t{text}")
            t = round(t + dur + rng.uniform(0.1, 1.5), 2)
        (SYN / "transcripts" / f"{pid}_TRANSCRIPT.csv").write_text("\n".join(lines) + "\n")
    label_lines = ["Participant_ID,PHQ8_Binary,PHQ8_Score"]
    label_lines += [f"{pid},{int(total >= 10)},{total}" for pid, total in TOTALS.items()]
    (SYN / "labels.csv").write_text("\n".join(label_lines) + "\n")
    for name, ids in SPLITS.items():
        (SYN / "splits" / f"{name}.txt").write_text("".join(f"{i}\n" for i in ids))


def write_knowledge() -> None:
    kdir = FIX / "knowledge"
    kdir.mkdir(exist_ok=True)
    for name, body in KNOWLEDGE.items():
        (kdir / name).write_text(body + "\n")
    (kdir / "training_examples.jsonl").write_text(
        "".join(json.dumps(e) + "\n" for e in TRAINING_EXAMPLES)
    )


def doc_paths() -> dict[str, Path]:
    k = FIX / "knowledge"
    return {"phq8": k / "phq8.txt", "dsm5": k / "dsm5.txt",
            "data-description": k / "data_description.txt",
            "training-examples": k / "training_examples.jsonl"}


def _addends_for(total: int, rng: random.Random) -> list[int]:
    items = [0] * 8
    for _ in range(total):
        i = rng.choice([j for j in range(8) if items[j] < 3])
        items[i] += 1
    return items


def _ids_in(text: str) -> list[int]:
    return [int(m) for m in re.findall(r"^Participant (\d+):$", text, re.MULTILINE)]


def task1_reply(pid: int, value: int | None, with_line: bool = True) -> str:
    out = f"**Participant {pid}:**\nMental Health Assessment: synthetic assessment for {pid}.\n"
    if with_line:
        shown = 8 if value is None else value
        out += f"Likelihood of Ongoing Mental Health Disorder: **{shown}/7**.\n"
    return out


def make_responder(bundle: knowledge.PromptBundle, seed: int):
    repair_head = bundle.repair_instructions.split("{")[0].strip()
    samples = {s: (REPLIES / f"{s}_reply.txt").read_text() for s in ("stage1", "stage2", "stage3")}

    def respond(req) -> str:
        first_user = next(m.content for m in req.messages if m.role == "user")
        last = req.messages[-1].content
        ids = _ids_in(first_user)
        is_task1 = "7-point scale" in first_user
        repair = last.startswith(repair_head)
        if is_task1:
            if ids == TABLE4_IDS:
                return (REPLIES / "table4_reply.txt").read_text()
            pid = ids[0]
            if pid in NEEDS_REPAIR and not repair:
                return task1_reply(pid, LIKELIHOODS[pid], with_line=False)
            return task1_reply(pid, LIKELIHOODS[pid])

        pid = ids[0]
        rng = random.Random(seed * 1000 + pid)
        truth = TOTALS[pid]
        est1 = min(24, max(0, truth + rng.choice([-3, -1, 0, 2, 4])))
        est2 = min(24, max(0, truth + rng.choice([-2, 0, 1, 2])))
        users = [m for m in req.messages if m.role == "user"]
        n_user = len([m for m in users if not m.content.startswith(repair_head)])
        if n_user == 1:
            if pid == SAMPLE_SESSION_ID:
                return samples["stage1"]
            a = _addends_for(est1, rng)
            return (f"Summary of evidence for participant {pid}.\n"
                    f"**Estimated PHQ-8 Score:** {'+'.join(map(str, a))}={est1}\n")
        if n_user == 2:
            if pid == SAMPLE_SESSION_ID:
                return samples["stage2"]
            if pid in GARBLED_STAGE2:
                return "I am unable to break this down further."
            a = _addends_for(est2, rng)
            lines = [f"Item {i + 1}: evidence. **Score:** {s}" for i, s in enumerate(a)]
            return "\n".join(lines) + f"\n**Total PHQ-8 Score:** {'+'.join(map(str, a))} = {est2}\n"
        if pid == SAMPLE_SESSION_ID:
            return samples["stage3"]
        if abs(est2 - truth) <= 1:
            return f"After review, I agree with the assigned PHQ-8 score of {truth}."
        return (f"I do not agree with the assigned score of {truth}. "
                f"The revised PHQ-8 score of {est2} fits the evidence better.")

    return respond


def record_runs(seed: int) -> None:
    bundle = knowledge.PromptBundle.default()
    spec = BackendSpec(kind="scripted", model_id="gpt-4", max_in_flight=1)
    cassette_path = FIX / "cassettes" / "synthetic.jsonl"
    cassette = Cassette(path=cassette_path)
    backend = RecordingBackend(ScriptedBackend(spec, make_responder(bundle, seed)), cassette)
    opts = orchestrator.RunOptions(model_id="gpt-4", max_in_flight=1)

    dialogues = [transcripts.extract_participant_text(t)
                 for t in transcripts.load_transcript_dir(SYN / "transcripts")]
    by_id = {d.participant_id: d for d in dialogues}

    enhanced = knowledge.load_config("enhanced", doc_paths())
    orchestrator.run_task1(backend, enhanced, bundle, [by_id[i] for i in TABLE4_IDS], 5,
                           options=opts)
    d5p8 = knowledge.load_config("dsm5-phq8", doc_paths())
    orchestrator.run_task1(backend, d5p8, bundle, dialogues, 1, options=opts)
    phq8 = knowledge.load_config("phq8", doc_paths())
    orchestrator.run_task2_batch(backend, phq8, bundle, dialogues, TOTALS, options=opts)
    cassette.save()
    print(f"recorded {len(cassette.entries)} cassette entries to {cassette_path}")


def write_backends() -> None:
    bdir = FIX / "backends"
    bdir.mkdir(exist_ok=True)
    (bdir / "replay.yaml").write_text(
        "kind: replay\ncassette_path: ../cassettes/synthetic.jsonl\nmodel_id: gpt-4\n"
        "temperature: 0.0\nmax_in_flight: 4\n"
    )
    (bdir / "timeout.yaml").write_text(
        "# Always stalls past its timeout; every request is NA.\n"
        "kind: scripted\nstall_s: 60\ntimeout_s: 0.05\nmodel_id: gpt-4\nmax_in_flight: 4\n"
    )
    (bdir / "openai.yaml").write_text(
        "kind: http_chat\nendpoint_url: https://api.openai.com/v1\n"
        "auth_env_var: OPENAI_API_KEY\nmodel_id: gpt-4\ntemperature: 0.0\n"
        "timeout_s: 3600\nmax_retries: 3\nmax_in_flight: 4\n"
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    write_dataset(rng)
    write_knowledge()
    write_backends()
    record_runs(args.seed)


if __name__ == "__main__":
    main()
