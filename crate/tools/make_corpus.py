#!/usr/bin/env python3
"""Builds the benchmark corpus under crates/core/tests/fixtures/flowbench.

Writes catalog.json, one YAML file per build step, and the BPMN files they
reference. BPMN is produced with `flowgen compile`, and every case is checked
by decompiling it again and diffing against its sequence.

Usage: tools/make_corpus.py [--flowgen target/release/flowgen] [--out DIR]
"""

import argparse
import json
import random
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
APPENDIX = ROOT / "crates/core/tests/fixtures/appendix"

# service -> (version, [nouns])
SERVICES = {
    "GitHub": ("3_0_0", ["Repository", "Issue", "Release"]),
    "Jira": ("2_0_0", ["Issue", "Project", "Sprint"]),
    "Slack": ("1_0_0", ["Message", "Channel", "Reminder"]),
    "Salesforce": ("4_1_0", ["Account", "Contact", "Lead"]),
    "HubSpot": ("1_2_0", ["Company", "Deal", "Ticket"]),
    "Gmail": ("1_0_0", ["Email", "Label", "Draft"]),
    "Zendesk": ("2_1_0", ["Ticket", "Organization", "Article"]),
    "Trello": ("1_0_0", ["Card", "Board", "Checklist"]),
    "Asana": ("1_1_0", ["Task", "Project", "Portfolio"]),
    "Box": ("2_0_0", ["File", "Folder", "Collaboration"]),
    "ServiceNow": ("3_1_0", ["Incident", "Problem", "Change"]),
    "Workday": ("1_0_0", ["Worker", "Position", "Timesheet"]),
    "Shopify": ("2_2_0", ["Order", "Product", "Customer"]),
    "Stripe": ("1_3_0", ["Payment", "Invoice", "Subscription"]),
    "Mailchimp": ("1_0_0", ["Campaign", "Member", "Template"]),
    "Twilio": ("1_0_0", ["Call", "Recording", "Number"]),
    "GoogleSheets": ("1_0_0", ["Spreadsheet", "Row", "Sheet"]),
    "Outlook": ("2_0_0", ["Event", "Contact", "Calendar"]),
    "Dropbox": ("2_0_0", ["Document", "Share", "Team"]),
    "SAP": ("1_0_0", ["Supplier", "Requisition", "Material"]),
}

HUMAN = {
    "GitHub": "GitHub", "Jira": "Jira", "Slack": "Slack", "Salesforce": "Salesforce",
    "HubSpot": "HubSpot", "Gmail": "Gmail", "Zendesk": "Zendesk", "Trello": "Trello",
    "Asana": "Asana", "Box": "Box", "ServiceNow": "ServiceNow", "Workday": "Workday",
    "Shopify": "Shopify", "Stripe": "Stripe", "Mailchimp": "Mailchimp", "Twilio": "Twilio",
    "GoogleSheets": "Google Sheets", "Outlook": "Outlook", "Dropbox": "Dropbox", "SAP": "SAP",
}

OPS = ["create", "retrievewithwhere", "retrieve", "update", "delete"]

CONDITIONS = [
    '{v}.status == "open"',
    "{v}.priority > 2",
    "{v}.is_active",
    '{v}.owner != ""',
    "{v}.amount > 1000",
]

WHILES = ["{v}.has_more", "{v}.pending > 0"]

REVIEWS = [
    "Review the {n} details",
    "Approve the {n}",
    "Check the {n} with the team",
    "Confirm the {n} manually",
]


def plural(word):
    if word.endswith("y") and word[-2] not in "aeiou":
        return word[:-1] + "ies"
    if word.endswith(("s", "sh", "ch", "x")):
        return word + "es"
    return word + "s"


def words(noun):
    out = ""
    for ch in noun:
        if ch.isupper() and out:
            out += " "
        out += ch.lower()
    return out


def activity(service, noun, op):
    version = SERVICES[service][0]
    return f"{service}_{noun}__{version}__{op}_{noun}"


def describe(service, noun, op):
    s, n = HUMAN[service], words(noun)
    return {
        "create": f"Create a new {s} {n}",
        "retrievewithwhere": f"Retrieve all {s} {plural(n)}",
        "retrieve": f"Get a {s} {n} by its id",
        "update": f"Update an existing {s} {n}",
        "delete": f"Delete a {s} {n}",
    }[op]


def catalog():
    return [
        {"id": activity(s, n, op), "description": describe(s, n, op)}
        for s, (_, nouns) in SERVICES.items()
        for n in nouns
        for op in OPS
    ]


# Programs are nested lists:
#   ("assign", var, service, noun, op) | ("user", text)
#   ("for", var, iterable, body) | ("while", cond, body) | ("if", cond, then, else)


def print_program(stmts, depth=0):
    pad = "  " * depth
    lines = []
    for s in stmts:
        if s[0] == "assign":
            lines.append(f"{pad}{s[1]} = {activity(*s[2:])}()")
        elif s[0] == "user":
            lines.append(f'{pad}user_task("{s[1]}")')
        elif s[0] == "for":
            lines.append(f"{pad}for {s[1]} in {s[2]}:")
            lines += print_program(s[3], depth + 1)
        elif s[0] == "while":
            lines.append(f"{pad}while {s[1]}:")
            lines += print_program(s[2], depth + 1)
        else:
            lines.append(f"{pad}if {s[1]}:")
            lines += print_program(s[2], depth + 1)
            if s[3]:
                lines.append(f"{pad}else:")
                lines += print_program(s[3], depth + 1)
    return lines


def text_of(stmts):
    return "\n".join(print_program(stmts))


def has_control(stmts):
    return any(s[0] in ("for", "while", "if") for s in stmts)


def has_user(stmts):
    for s in stmts:
        if s[0] == "user":
            return True
        for body in s[2:]:
            if isinstance(body, list) and has_user(body):
                return True
    return False


def gerund(op, service, noun):
    s, n = HUMAN[service], words(noun)
    return {
        "create": f"creating a {s} {n}",
        "retrievewithwhere": f"retrieving all the {plural(n)}",
        "retrieve": f"fetching the {n}",
        "update": f"updating the {n}",
        "delete": f"deleting the {n}",
    }[op]


def request(op, service, noun):
    s, n = HUMAN[service], words(noun)
    return {
        "create": f"create a new {n} in {s}",
        "retrievewithwhere": f"get all the {s} {plural(n)}",
        "retrieve": f"look up the {s} {n}",
        "update": f"update the {n} in {s}",
        "delete": f"delete the {s} {n}",
    }[op]


class Maker:
    def __init__(self, seed):
        self.rng = random.Random(seed)
        self.pairs = [(s, n) for s, (_, ns) in SERVICES.items() for n in ns]

    def pick(self, avoid=()):
        while True:
            s, n = self.rng.choice(self.pairs)
            if n not in avoid:
                return s, n

    def action(self, avoid=(), var=None):
        s, n = self.pick(avoid)
        op = self.rng.choice(["create", "update", "delete", "retrieve"])
        return ("assign", var or f"{n.lower()}_result", s, n, op), (s, n, op)

    def prior(self, shape):
        """A prior workflow plus the noun names it binds."""
        s1, n1 = self.pick()
        v1 = n1.lower()
        if shape == "linear":
            first = ("assign", plural(v1), s1, n1, "retrievewithwhere")
            second, _ = self.action(avoid=(n1,))
            return [first, second], n1
        if shape == "loop":
            first = ("assign", plural(v1), s1, n1, "retrievewithwhere")
            inner, _ = self.action(avoid=(n1,))
            return [first, ("for", v1, plural(v1), [inner])], n1
        if shape == "while":
            first = ("assign", v1, s1, n1, "retrieve")
            inner, _ = self.action(avoid=(n1,))
            cond = self.rng.choice(WHILES).format(v=v1)
            return [first, ("while", cond, [inner])], n1
        first = ("assign", v1, s1, n1, "retrieve")
        then, _ = self.action(avoid=(n1,))
        cond = self.rng.choice(CONDITIONS).format(v=v1)
        other = []
        if self.rng.random() < 0.5:
            other = [("user", self.rng.choice(REVIEWS).format(n=words(n1)))]
        return [first, ("if", cond, [then], other)], n1

    def case(self, kind):
        """(prior or None, expected, utterance, tags)."""
        rng = self.rng
        if kind == "initial":
            s1, n1 = self.pick()
            v1 = n1.lower()
            step, (s2, n2, op2) = self.action(avoid=(n1,))
            shape = rng.choice(["linear", "loop", "if"])
            first_op = "retrieve" if shape == "if" else "retrievewithwhere"
            first = ("assign", v1 if shape == "if" else plural(v1), s1, n1, first_op)
            if shape == "linear":
                expected = [first, step]
                utt = f"{describe(s1, n1, first_op)} and then {request(op2, s2, n2)}"
            elif shape == "loop":
                expected = [first, ("for", v1, plural(v1), [step])]
                utt = f"{describe(s1, n1, first_op)} and for each {words(n1)} {request(op2, s2, n2)}"
            else:
                cond = rng.choice(CONDITIONS).format(v=v1)
                expected = [first, ("if", cond, [step], [])]
                utt = f"{describe(s1, n1, first_op)}; when {cond.replace(v1 + '.', 'its ')} {request(op2, s2, n2)}"
            tags = ["add", "linear" if shape == "linear" else "conditional"]
            return None, expected, utt, tags

        shape = rng.choice(["linear", "loop", "while", "if"])
        prior, n1 = self.prior(shape)
        v1 = n1.lower()
        expected = [list(s) if isinstance(s, tuple) else s for s in prior]
        expected = [tuple(s) for s in expected]
        tags = [kind]

        if kind == "add":
            modes = ["end", "user", "wrap", "branch"] if shape == "linear" else ["end", "inside", "user"]
            mode = rng.choice(modes)
            if mode == "end":
                step, (s, n, op) = self.action(avoid=(n1,), var="extra_" + rng.choice(["item", "record", "entry"]))
                expected = expected + [step]
                utt = f"At the end, {request(op, s, n)}"
            elif mode == "user":
                text = rng.choice(REVIEWS).format(n=words(n1))
                expected = expected[:1] + [("user", text)] + expected[1:]
                utt = f"Before anything else happens to the {words(n1)}, have someone {text[0].lower() + text[1:]}"
                tags.append("user_task")
            elif mode == "inside":
                block = expected[1]
                step, (s, n, op) = self.action(avoid=(n1,), var="more_" + rng.choice(["item", "record"]))
                if block[0] in ("for",):
                    block = ("for", block[1], block[2], block[3] + [step])
                elif block[0] == "while":
                    block = ("while", block[1], block[2] + [step])
                else:
                    block = ("if", block[1], block[2] + [step], block[3])
                expected[1] = block
                utt = f"Inside that step, also {request(op, s, n)}"
            elif mode == "wrap":
                first = expected[0]
                if first[4] != "retrievewithwhere":
                    first = ("assign", plural(v1), first[2], first[3], "retrievewithwhere")
                    expected[0] = first
                    prior[0] = first
                rest = expected[1:]
                expected = [first, ("for", v1, first[1], rest)]
                utt = f"Do the remaining steps once for every {words(n1)} instead of only once"
                tags = ["add"]
            else:
                first = ("assign", v1, prior[0][2], prior[0][3], "retrieve")
                prior[0] = first
                expected[0] = first
                cond = rng.choice(CONDITIONS).format(v=v1)
                expected = [first, ("if", cond, expected[1:], [])]
                utt = f"Only run the last step when {cond.replace(v1 + '.', 'the ' + words(n1) + ' ')}"
        elif kind == "delete":
            if shape == "linear":
                extra, (s, n, op) = self.action(avoid=(n1,), var="extra_record")
                prior = prior + [extra]
                expected = [tuple(s) for s in prior[:-1]]
                utt = f"Remove the final step, we no longer need to {request(op, s, n)}"
            elif shape == "if" and prior[1][3]:
                block = prior[1]
                expected[1] = ("if", block[1], block[2], [])
                utt = f"Drop the manual step from the otherwise branch"
                tags.append("user_task")
            else:
                block = prior[1]
                body = block[-1] if block[0] != "if" else block[2]
                extra, (s, n, op) = self.action(avoid=(n1,), var="extra_record")
                if block[0] == "for":
                    prior[1] = ("for", block[1], block[2], body + [extra])
                elif block[0] == "while":
                    prior[1] = ("while", block[1], body + [extra])
                else:
                    prior[1] = ("if", block[1], body + [extra], block[3])
                utt = f"Stop trying to {request(op, s, n)} in that step"
        else:
            target = prior[1]
            if target[0] == "assign":
                idx, path = 1, None
                old = target
            else:
                body = target[3] if target[0] == "for" else target[2]
                old = body[0]
                path = target
            s, n = self.pick(avoid=(n1, old[3]))
            op = rng.choice(["create", "update", "delete"])
            new = ("assign", old[1], s, n, op)
            if path is None:
                expected[1] = new
            elif path[0] == "for":
                expected[1] = ("for", path[1], path[2], [new] + path[3][1:])
            elif path[0] == "while":
                expected[1] = ("while", path[1], [new] + path[2][1:])
            else:
                expected[1] = ("if", path[1], [new] + path[2][1:], path[3])
            utt = f"Instead of {gerund(old[4], old[2], old[3])}, {request(op, s, n)}"

        control = has_control(expected) or has_control(prior)
        tags.append("conditional" if control else "linear")
        if has_user(expected) or has_user(prior):
            tags.append("user_task")
        return prior, expected, utt, sorted(set(tags))


def block(text, indent):
    pad = " " * indent
    return "\n".join(pad + line if line else line for line in text.split("\n"))


def case_yaml(uid, tags, utterance, prior, expected, context_ref, output_ref):
    lines = ["_metadata:", "  tags:"]
    lines += [f"    - {t}" for t in tags]
    lines += [f"  uid: {uid}", "input:", "  utterance: |-", block(utterance, 4)]
    if prior is None:
        lines.append("  prior_sequence: []")
    else:
        lines += ["  prior_sequence:", "    - |-", block(prior, 6)]
    lines.append("  prior_context: []")
    if context_ref:
        lines += ["  bpmn:", f'    $ref: "{context_ref}"']
    lines += ["expected_output:", "  sequence:", "    - |-", block(expected, 6)]
    lines += ["  bpmn:", f'    $ref: "{output_ref}"']
    return "\n".join(lines) + "\n"


class Flowgen:
    def __init__(self, exe):
        self.exe = exe
        self.tmp = Path(tempfile.mkdtemp())

    def run(self, *args, stdin=None):
        out = subprocess.run([self.exe, *args], input=stdin, capture_output=True, text=True)
        if out.returncode != 0:
            raise RuntimeError(out.stderr.strip())
        return out.stdout

    def compile(self, ir):
        return self.run("compile", "-", stdin=ir)

    def same(self, a, b):
        pa, pb = self.tmp / "a.py", self.tmp / "b.py"
        pa.write_text(a)
        pb.write_text(b)
        return self.run("diff", "--base", str(pa), "--target", str(pb)).strip() == ""

    def round_trips(self, ir):
        bpmn = self.compile(ir)
        return self.same(ir, self.run("decompile", "-", stdin=bpmn)), bpmn


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--flowgen", default=str(ROOT / "target/release/flowgen"))
    ap.add_argument("--out", default=str(ROOT / "crates/core/tests/fixtures/flowbench"))
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    out = Path(args.out)
    if out.exists():
        shutil.rmtree(out)
    (out / "context").mkdir(parents=True)
    (out / "output").mkdir()
    (out / "catalog.json").write_text(json.dumps(catalog(), indent=1) + "\n")

    fg = Flowgen(args.flowgen)
    maker = Maker(args.seed)
    kinds = ["initial"] * 14 + ["add"] * 35 + ["delete"] * 22 + ["replace"] * 29
    maker.rng.shuffle(kinds)
    uid = 0
    rejected = 0
    for kind in kinds:
        uid += 1
        if uid == 97:
            shutil.copy(APPENDIX / "uid_97_context.bpmn", out / "context/uid_97_context.bpmn")
            shutil.copy(APPENDIX / "uid_97_output.bpmn", out / "output/uid_97_output.bpmn")
            (out / "uid_97.yaml").write_text(UID_97)
            uid += 1
        while True:
            prior, expected, utt, tags = maker.case(kind)
            prior_text = None if prior is None else text_of(prior)
            expected_text = text_of(expected)
            if prior_text is not None and fg.same(prior_text, expected_text):
                rejected += 1
                continue
            ok_e, bpmn_e = fg.round_trips(expected_text)
            ok_p, bpmn_p = (True, None) if prior is None else fg.round_trips(prior_text)
            if ok_e and ok_p:
                break
            rejected += 1
        context_ref = None
        if bpmn_p is not None:
            context_ref = f"context/uid_{uid}_context.bpmn"
            (out / context_ref).write_text(bpmn_p)
        output_ref = f"output/uid_{uid}_output.bpmn"
        (out / output_ref).write_text(bpmn_e)
        (out / f"uid_{uid}.yaml").write_text(
            case_yaml(uid, tags, utt, prior_text, expected_text, context_ref, output_ref)
        )
    print(f"wrote {uid} cases to {out} ({rejected} candidates rejected)", file=sys.stderr)


UID_97 = """_metadata:
  tags:
    - conditional_update
  uid: 97
input:
  utterance: |-
    Instead of retrieving all the issues 
    just create a new issue in each repo
  prior_sequence:
    - |-
      repositories = GitHub_Repository__3_0_0__retrievewithwhere_Repository()
      for repo in repositories:
        new_issue = GitHub_Issue__3_0_0__retrievewithwhere_Issue()
  prior_context: []
  bpmn:
    $ref: "context/uid_97_context.bpmn"
expected_output:
  sequence:
    - |-
      repositories = GitHub_Repository__3_0_0__retrievewithwhere_Repository()
      for repo in repositories:
        updated_issue = GitHub_Issue__3_0_0__create_Issue()
  bpmn:
    $ref: "output/uid_97_output.bpmn"
"""

if __name__ == "__main__":
    main()
