import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function fakeFetch(
  handler: (input: string, init?: RequestInit) => { status: number; body: unknown },
) {
  const calls: { input: string; init?: RequestInit }[] = [];
  const fetchFn = async (input: string, init?: RequestInit) => {
    calls.push({ input, init });
    const { status, body } = handler(input, init);
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { fetchFn, calls };
}

describe("ApiClient", () => {
  it("prefixes the base and parses JSON", async () => {
    const { fetchFn, calls } = fakeFetch(() => ({
      status: 200,
      body: [{ session_id: "abc" }],
    }));
    const client = new ApiClient("http://svc:1", fetchFn);
    const sessions = await client.listSessions();
    expect(sessions[0]!.session_id).toBe("abc");
    expect(calls[0]!.input).toBe("http://svc:1/api/v1/sessions");
  });

  it("posts labels with the idempotency key", async () => {
    const { fetchFn, calls } = fakeFetch(() => ({
      status: 200,
      body: { status: "training", iteration: 0, labeled_count: 2 },
    }));
    const client = new ApiClient("", fetchFn);
    await client.submitLabels("sid", { a: 0, b: 1 }, "key-1");
    const body = JSON.parse(String(calls[0]!.init?.body));
    expect(body).toEqual({
      labels: { a: 0, b: 1 },
      idempotency_key: "key-1",
    });
    expect(calls[0]!.init?.method).toBe("POST");
  });

  it("raises ApiError with the service's error envelope", async () => {
    const { fetchFn } = fakeFetch(() => ({
      status: 422,
      body: {
        error_code: "BatchMismatchError",
        message: "missing ids",
        details: { missing: ["x.png"], extra: [] },
      },
    }));
    const client = new ApiClient("", fetchFn);
    const err = await client
      .submitLabels("sid", {}, "k")
      .then(() => null)
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(422);
    expect((err as ApiError).errorCode).toBe("BatchMismatchError");
    expect((err as ApiError).details.missing).toEqual(["x.png"]);
  });

  it("wraps network failures", async () => {
    const client = new ApiClient("", async () => {
      throw new TypeError("connection refused");
    });
    const err = await client
      .listSessions()
      .then(() => null)
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(0);
    expect((err as ApiError).errorCode).toBe("network");
  });
});
