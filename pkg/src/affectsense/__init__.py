"""Real-time multimodal affect sensing pipelines.

Submodules: streamcore (dataflow engine), vision, physiology, audio,
textsent, context, sinks, bus, synth (deterministic sensor stand-ins),
session (pipeline wiring), cli.
"""

__version__ = "0.1.0"
