"""Minimal stand-in for the analysis sandbox, used by the Rust tests.

Reads one JSON request from stdin, runs `code` with the records bound to
`data`, and prints one JSON response. Timeouts are enforced by the caller,
which kills this process.
"""
import contextlib
import io
import json
import sys
import traceback


def main():
    try:
        request = json.loads(sys.stdin.readline())
        code = request["code"]
        records = request["records"]
    except Exception:
        print(json.dumps({"status": "error", "traceback": traceback.format_exc(), "stdout": ""}))
        return
    scope = {"data": records}
    captured = io.StringIO()
    try:
        with contextlib.redirect_stdout(captured):
            exec(compile(code, "<analysis>", "exec"), scope)
        if "answer" not in scope:
            raise NameError("the script did not assign `answer`")
        answer = json.loads(json.dumps(scope["answer"]))
    except Exception:
        print(json.dumps({"status": "error", "traceback": traceback.format_exc(), "stdout": captured.getvalue()}))
        return
    print(json.dumps({"status": "ok", "answer": answer, "stdout": captured.getvalue()}))


if __name__ == "__main__":
    main()
