"""Shared fixtures. The whole suite runs offline: any attempt to open a
network connection fails the test that made it."""

import socket

import pytest


@pytest.fixture(autouse=True)
def _no_network(monkeypatch):
    def guard(*args, **kwargs):
        raise AssertionError("test attempted to open a network connection")

    monkeypatch.setattr(socket.socket, "connect", guard)
