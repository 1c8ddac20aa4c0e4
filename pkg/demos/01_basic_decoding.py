"""Walk through one decoding run step by step.

We build a tiny define-before-use task (tokens 0/1 define variables a/b,
tokens 2/3 use them), decode it with and without the revision stage, and
read the cost and the edits straight off the trace.
"""

import numpy as np

import remask as rm

rng = np.random.default_rng(0)
task = rm.gen_binding_task(2, 6, rng)
print(f"task: {task.kind}, L={task.L}, |V|={task.vocab.size}, "
      f"{len(task.support())} valid sequences")

config = rm.DecodeConfig(N=128, L=6, unmasker="low_confidence", reviser="core")
report = rm.run(config, task)

print(f"\nfinal response: {report.final_response}")
print(f"valid: {report.valid}, log-likelihood: {report.loglik:.4f}")
print(f"NFE: {report.nfe} = {report.base_passes} base passes "
      f"+ {report.revision_passes} revision probes")
print(f"probe steps: {report.trace.revision_pass_steps()}")

# The compute story: dropping the reviser saves exactly the probe passes.
baseline = rm.run(
    rm.DecodeConfig(N=128, L=6, unmasker="low_confidence", reviser="none"),
    task,
)
print(f"\nwithout revision: NFE {baseline.nfe}, valid: {baseline.valid}")

# Every decision is on the trace; replaying it reconstructs the output.
replayed = report.trace.replay(task.vocab, task.prompt, task.L)
assert replayed.response == report.final_response
print("\ntrace replay reproduces the final state; first events:")
for line in report.trace.to_jsonl().splitlines()[:6]:
    print(" ", line)
