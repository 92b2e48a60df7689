"""Teleoperation gateway for humans and robotic things.

A cloud-style service where simulated robots, sensors, and cameras connect
over stream and datagram links; telemetry is stored and fanned out live to
web clients; anomalies dispatch inspection missions; and operators drive
robots through motion-scaled teleoperation and shared control.
"""

__version__ = "0.1.0"
