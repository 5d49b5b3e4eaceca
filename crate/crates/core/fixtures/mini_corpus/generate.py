#!/usr/bin/env python3
"""Regenerates the bundled mini corpus.

Ten synthetic videos: eight medical how-to videos with planted answer
segments, one medical talk without a procedure and one non-medical video.
Every sentence is one subtitle cue and is long enough (> 20 words) that the
default 40-word segmenter keeps one sentence per segment, so the planted
answer boundaries coincide with segment boundaries.

Run from this directory: python3 generate.py
"""

import json
import random
import struct

random.seed(7)

INTRO = [
    "hi everyone and welcome back to the channel where we share simple and practical health advice that anyone can follow at home today",
    "before we start please remember that this video is for general information only and you should always talk with your own doctor",
    "thanks for joining us again this week and if you are new here we post short videos about everyday health questions every single week",
]
OUTRO = [
    "that is all for today so thank you very much for watching and please share this video with friends and family who might find it useful",
    "if you enjoyed this video please leave a comment below with your own questions and we will try to answer them in a future episode soon",
]
BRIDGE = "now that we have covered the first part let us take a short moment to talk about when you should call a doctor or nurse for extra help"

VIDEOS = [
    ("nosebleed", [
        ("how do i stop a nosebleed at home", [
            "first sit upright and lean your head slightly forward so that the blood drains out of the nose instead of running down the back of your throat",
            "then pinch the soft part of the nose firmly with your thumb and index finger and keep steady pressure for ten full minutes without letting go",
            "while you keep the pressure on breathe slowly through your mouth and place a cold pack on the bridge of the nose to help the vessels narrow",
        ]),
    ]),
    ("burn", [
        ("how should i cool a minor burn on my hand", [
            "first hold the burned area under cool running water for at least ten minutes which draws the heat out of the skin and eases the pain",
            "then gently remove rings or tight items near the burned area before the skin starts to swell and make them hard to take off later",
        ]),
        ("how do i cover a burn after cooling it", [
            "to cover the burn loosely wrap it with a sterile non stick dressing or clean plastic film so that air does not irritate the damaged skin",
            "keep the dressing clean and dry and change the cover once a day while you check the skin for redness swelling or other signs of infection",
        ]),
    ]),
    ("handwashing", [
        ("what are the steps to wash my hands properly", [
            "first wet your hands with clean running water and apply enough soap to cover every surface of both hands including the backs and the wrists",
            "then rub your palms together and scrub between the fingers under the nails and around the thumbs for at least twenty seconds of steady washing",
            "finally rinse your hands well under running water and dry them completely with a clean towel or let them air dry before touching anything",
        ]),
    ]),
    ("ankle", [
        ("how do i wrap a sprained ankle with a bandage", [
            "first hold the foot at a right angle and start the elastic bandage at the base of the toes wrapping around the foot two times firmly",
            "then cross the bandage over the top of the foot and around the back of the ankle in a figure eight pattern that overlaps each earlier layer",
            "finish the wrap above the ankle bone and secure the end with clips while checking that the toes stay warm and pink and not numb at all",
        ]),
    ]),
    ("blood_pressure", [
        ("how do i measure my blood pressure at home", [
            "first sit quietly for five minutes with your back supported and your feet flat on the floor and rest your arm on a table at heart level",
            "then wrap the cuff snugly around the bare upper arm about two fingers above the elbow with the tube running down the middle of the arm",
            "press the start button and stay still and silent while the cuff inflates and deflates and then write down both numbers shown on the screen",
        ]),
    ]),
    ("eye_drops", [
        ("what is the right way to use eye drops", [
            "first wash your hands and tilt your head back and gently pull the lower eyelid down with one finger to form a small pocket for the drop",
            "then hold the bottle above the eye without touching it and squeeze one drop into the pocket before closing the eye gently for two minutes",
        ]),
    ]),
    ("splinter", [
        ("how can i remove a splinter from my finger", [
            "first clean the skin around the splinter with soap and warm water and sterilize a pair of fine tweezers by wiping them with rubbing alcohol",
            "then grip the exposed end of the splinter with the tweezers and pull it out slowly at the same angle at which it went into the skin",
        ]),
        ("what should i do after removing a splinter", [
            "to care for the wound afterwards squeeze gently to let a little blood wash out germs and then wash the area again with soap and water",
            "cover the small wound with a clean adhesive bandage and watch it over the next few days for redness warmth swelling or pus around it",
        ]),
    ]),
    ("inhaler", [
        ("how do i use an asthma inhaler correctly", [
            "first remove the cap and shake the inhaler well for a few seconds and then breathe out fully away from the mouthpiece to empty your lungs",
            "then seal your lips around the mouthpiece and press the canister once as you start a slow deep breath in through your mouth for several seconds",
            "hold your breath for about ten seconds so the medicine settles in the lungs and then breathe out slowly and wait a minute before another puff",
        ]),
    ]),
]

TALK = [
    "in this talk our panel discusses how hospitals across the country have changed the way they plan nurse staffing during the busy winter months",
    "the speakers compare several reports about waiting times and they share their personal views on what the numbers might mean for patients",
    "there is also a long discussion about funding and public policy with many different opinions from doctors managers and patient groups",
    "the panel ends with questions from the audience about research priorities and the future of training for young doctors in rural areas",
]
GARDEN = [
    "today in the garden we are looking at the tomato plants which have grown much taller this summer thanks to the warm and sunny weather",
    "the basil and the mint are also doing well although the snails have been eating some of the lower leaves during the rainy nights",
    "next weekend we plan to build a new raised bed from old wooden pallets and fill it with compost from the heap behind the shed",
    "thanks for watching this garden update and see you next time when we will show you how the new raised bed turned out in the end",
]

FEATURE_DIM = 8


def stamp(t, vtt):
    ms = int(round(t * 1000))
    h, ms = divmod(ms, 3_600_000)
    m, ms = divmod(ms, 60_000)
    s, ms = divmod(ms, 1000)
    sep = "." if vtt else ","
    return f"{h:02}:{m:02}:{s:02}{sep}{ms:03}"


def write_subtitles(path, cues, vtt):
    with open(path, "w", newline="\n") as f:
        if vtt:
            f.write("WEBVTT\n\n")
        for i, (text, a, b) in enumerate(cues, 1):
            if not vtt:
                f.write(f"{i}\n")
            f.write(f"{stamp(a, vtt)} --> {stamp(b, vtt)}\n{text}\n\n")


def timed(sentences, t0=0.0):
    cues = []
    t = t0
    for s in sentences:
        d = round(0.4 * len(s.split()), 1)
        cues.append((s + ".", round(t, 1), round(t + d, 1)))
        t += d
    return cues


def write_track(path, duration, answers):
    n = int(-(-duration // 1))
    rows = []
    for sec in range(n):
        inside = any(a <= sec < b for a, b in answers)
        row = [random.gauss(0.0, 0.1) for _ in range(FEATURE_DIM)]
        if inside:
            for k in range(FEATURE_DIM // 2):
                row[k] += 1.0
        rows.append(row)
    with open(path, "wb") as f:
        f.write(b"VFTR")
        f.write(struct.pack("<III", 1, n, FEATURE_DIM))
        for row in rows:
            f.write(struct.pack(f"<{FEATURE_DIM}f", *row))


def main():
    manifest = []
    gold = []
    for k, (name, procedures) in enumerate(VIDEOS):
        vid = f"v{k + 1:02}_{name}"
        sentences = list(INTRO[k % 3 : k % 3 + 2] if k % 3 < 2 else INTRO[2:])
        spans = []
        for p, (question, steps) in enumerate(procedures):
            if p > 0:
                sentences.append(BRIDGE)
            spans.append((len(sentences), len(sentences) + len(steps), question))
            sentences.extend(steps)
        sentences.append(OUTRO[k % 2])
        cues = timed(sentences, 1.0)
        duration = round(cues[-1][2] + 2.0, 1)
        answers = []
        for a, b, question in spans:
            start, end = cues[a][1], cues[b - 1][2]
            answers.append((start, end))
            gold.append({
                "video_id": vid,
                "question": question,
                "answer_start_s": start,
                "answer_end_s": end,
                "provenance": {"tagger": "gold"},
            })
        vtt = k % 2 == 1
        sub = f"{vid}.{'vtt' if vtt else 'srt'}"
        write_subtitles(sub, cues, vtt)
        write_track(f"{vid}.vftr", duration, answers)
        manifest.append({
            "video_id": vid,
            "subtitle_path": sub,
            "feature_path": f"{vid}.vftr",
            "duration_s": duration,
            "category": "medical_instructional",
            "url": f"https://example.org/videos/{vid}",
        })
    for k, (vid, sentences, category) in enumerate([
        ("v09_staffing_talk", TALK, "medical_non_instructional"),
        ("v10_garden_update", GARDEN, "non_medical"),
    ]):
        cues = timed(sentences, 0.5)
        duration = round(cues[-1][2] + 1.5, 1)
        sub = f"{vid}.srt"
        write_subtitles(sub, cues, False)
        manifest.append({
            "video_id": vid,
            "subtitle_path": sub,
            "feature_path": None,
            "duration_s": duration,
            "category": category,
            "url": f"https://example.org/videos/{vid}",
        })
    manifest.sort(key=lambda r: r["video_id"])
    with open("manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    with open("gold.jsonl", "w") as f:
        for g in gold:
            f.write(json.dumps(g) + "\n")


if __name__ == "__main__":
    main()
