# MSQED Lab - Core Module
