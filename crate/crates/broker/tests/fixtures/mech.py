#!/usr/bin/env python3
"""Test mechanism speaking the framed wire protocol on stdin/stdout.

usage: mech.py MODE [LOG]

  conforming     NEEDS [description] on probe, RESULT text/html on supply
  sleep          sleeps 60 s before answering
  out-of-schema  asks for a label the image schema does not define
  double-needs   asks for more input after it was supplied

Each request's type is appended to LOG when given.
"""
import base64
import json
import struct
import sys
import time


def read_frame():
    (n,) = struct.unpack(">I", sys.stdin.buffer.read(4))
    return json.loads(sys.stdin.buffer.read(n))


def write_frame(msg):
    data = json.dumps(msg).encode()
    sys.stdout.buffer.write(struct.pack(">I", len(data)) + data)
    sys.stdout.buffer.flush()


def main():
    mode = sys.argv[1]
    request = read_frame()
    if len(sys.argv) > 2:
        with open(sys.argv[2], "a") as log:
            log.write(request["type"] + "\n")
    if mode == "sleep":
        time.sleep(60)
    if request["type"] == "PROBE":
        labels = ["caption"] if mode == "out-of-schema" else ["description"]
        write_frame({"type": "NEEDS", "labels": labels})
    elif mode == "double-needs":
        write_frame({"type": "NEEDS", "labels": ["thumbnail"]})
    else:
        text = base64.b64decode(request["inputs"]["description"]["body"]).decode()
        html = "<p>" + text.replace("&", "&amp;").replace("<", "&lt;") + "</p>"
        body = base64.b64encode(html.encode()).decode()
        write_frame({"type": "RESULT", "mime": "text/html", "body": body})


main()
