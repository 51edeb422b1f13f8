"""Provider plumbing shared by the vision and audio stages.

Heavy perception models stay behind small interfaces; deterministic mocks
ship in-tree and remote models plug in over HTTP JSON. Provider calls run
under a per-call deadline so one stuck backend cannot stall a pipeline.
"""

from __future__ import annotations

import concurrent.futures
import json
import socket
import urllib.error
import urllib.request


class ProviderUnavailable(RuntimeError):
    """No provider configured, or the provider refused the call."""


class NetworkTimeout(RuntimeError):
    """A remote provider did not answer within its deadline."""


_POOL = concurrent.futures.ThreadPoolExecutor(max_workers=8,
                                              thread_name_prefix="provider")


def call_with_deadline(fn, args=(), deadline_s: float = 0.2):
    """Run fn(*args), raising NetworkTimeout if it misses the deadline.

    The worker keeps running after a timeout (it cannot be killed); the
    caller just stops waiting, which for pipeline stages means the frame
    produces no output.
    """
    future = _POOL.submit(fn, *args)
    try:
        return future.result(timeout=deadline_s)
    except concurrent.futures.TimeoutError:
        raise NetworkTimeout(f"provider call exceeded {deadline_s:.3f}s") from None


def map_with_deadline(fn, items, deadline_s: float = 0.2):
    """Apply fn to each item concurrently, results in input order.

    Items whose call times out or raises ProviderUnavailable yield None in
    their slot so callers can keep frame alignment.
    """
    futures = [_POOL.submit(fn, item) for item in items]
    results = []
    for future in futures:
        try:
            results.append(future.result(timeout=deadline_s))
        except (concurrent.futures.TimeoutError, ProviderUnavailable,
                NetworkTimeout):
            results.append(None)
    return results


def http_post_json(url: str, payload: dict, timeout_s: float = 5.0,
                   token: str | None = None) -> dict:
    """POST a JSON body and decode the JSON response."""
    body = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"})
    if token:
        request.add_header("Authorization", f"Bearer {token}")
    try:
        with urllib.request.urlopen(request, timeout=timeout_s) as response:
            return json.loads(response.read().decode("utf-8"))
    except (socket.timeout, TimeoutError) as err:
        raise NetworkTimeout(str(err)) from err
    except urllib.error.URLError as err:
        if isinstance(err.reason, (socket.timeout, TimeoutError)):
            raise NetworkTimeout(str(err)) from err
        raise ProviderUnavailable(str(err)) from err
    except (ValueError, OSError) as err:
        raise ProviderUnavailable(str(err)) from err
