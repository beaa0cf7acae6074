from attention_dse.cli import entrypoint

entrypoint()
