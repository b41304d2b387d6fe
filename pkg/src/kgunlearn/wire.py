"""JSON bodies exchanged with remote probe and judge endpoints."""

from __future__ import annotations

from pydantic import BaseModel, Field

CHOICES = ("Yes", "No", "Unknown")


class ProbeRequest(BaseModel):
    prompt: str
    choices: list[str] = Field(default_factory=lambda: list(CHOICES))


class ProbeResponse(BaseModel):
    logprobs: dict[str, float]
    top_tokens: list[str]


class JudgeRequest(BaseModel):
    prompt: str


class JudgeResponse(BaseModel):
    completion: str
